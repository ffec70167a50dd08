//! 8-bit binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    /// Interleaved row-major samples.
    pub data: Vec<u8>,
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("netpbm: truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("netpbm: invalid {what}")))
}

impl Image {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let channels = match header_token(bytes, &mut pos)? {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(Error::Format(format!(
                    "netpbm: unsupported magic {:?} (expected P5 or P6)",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Format("netpbm: zero image dimension".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("netpbm: only 8-bit images are supported, maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format("netpbm: missing raster".into()));
        }
        pos += 1;
        let len = width * height * channels;
        let raster = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::Format(format!("netpbm: raster needs {len} bytes")))?;
        let data = if maxval == 255 {
            raster.to_vec()
        } else {
            raster
                .iter()
                .map(|&v| ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8)
                .collect()
        };
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// `(1, 3, h, w)` tensor with values `v / 255`; grayscale is replicated.
    pub fn to_rgb_tensor(&self) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut data = vec![0.0f32; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                let src = if self.channels == 1 { p } else { p * 3 + c };
                data[c * plane + p] = self.data[src] as f32 / 255.0;
            }
        }
        Tensor::from_parts(Shape::new(1, 3, self.height, self.width), data)
    }

    /// Grayscale image from a single-channel map, `value * scale` clamped to `[0, 255]`.
    pub fn from_map(map: &Tensor<f32>, scale: f32) -> Result<Self> {
        let s = map.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::invalid("from_map", format!("expected (1,1,h,w), got {s}")));
        }
        let data = map
            .data()
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        Ok(Image {
            width: s.w,
            height: s.h,
            channels: 1,
            data,
        })
    }
}
