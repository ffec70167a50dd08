//! Binary tensor (`RRTN`) and weight container (`RRWT`) files.
//!
//! `RRTN`: magic, u32 version, u8 dtype (0 = f32, 1 = f64), u8 rank (4),
//! four u64 dims, then the row-major little-endian payload.
//!
//! `RRWT`: magic, u32 version, u32 tensor count, then per tensor a u16 name
//! length, the UTF-8 name and an embedded `RRTN` record.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Shape, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"RRTN";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"RRWT";
pub const FORMAT_VERSION: u32 = 1;

/// Named parameter tensors in creation order.
pub type WeightMap<T> = IndexMap<String, Tensor<T>>;

struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Format(format!("{}: unexpected end of data", self.what)));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {version}",
                self.what
            )));
        }
        Ok(())
    }
}

pub fn encode_tensor<T: Element>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE as u8);
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * T::DTYPE.size());
    for &v in t.data() {
        v.write_le(out);
    }
}

fn decode_tensor_from<T: Element>(r: &mut Reader<'_>) -> Result<Tensor<T>> {
    r.header(TENSOR_MAGIC)?;
    let code = r.u8()?;
    let dtype =
        DType::from_code(code).ok_or_else(|| Error::Format(format!("RRTN: unknown dtype {code}")))?;
    let rank = r.u8()?;
    if rank != 4 {
        return Err(Error::Format(format!("RRTN: rank must be 4, got {rank}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = usize::try_from(r.u64()?).map_err(|_| Error::Format("RRTN: dim overflow".into()))?;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let bytes = shape
        .numel()
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format("RRTN: payload size overflow".into()))?;
    let payload = r.take(bytes)?;
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::read_le(c)))
            .collect(),
    };
    Tensor::from_vec(shape, data).map_err(|e| Error::Format(format!("RRTN: {e}")))
}

/// Decodes one tensor, converting the payload to `T` if needed.
pub fn decode_tensor<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader {
        bytes,
        what: "RRTN",
    };
    let t = decode_tensor_from(&mut r)?;
    if !r.bytes.is_empty() {
        return Err(Error::Format("RRTN: trailing bytes".into()));
    }
    Ok(t)
}

pub fn encode_weights<T: Element>(weights: &WeightMap<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let count = u32::try_from(weights.len()).map_err(|_| Error::Format("RRWT: too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in weights {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("RRWT: name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out);
    }
    Ok(out)
}

pub fn decode_weights<T: Element>(bytes: &[u8]) -> Result<WeightMap<T>> {
    let mut r = Reader {
        bytes,
        what: "RRWT",
    };
    r.header(WEIGHTS_MAGIC)?;
    let count = r.u32()?;
    let mut map = WeightMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("RRWT: name is not UTF-8".into()))?
            .to_owned();
        r.what = "RRTN";
        let t = decode_tensor_from(&mut r)?;
        r.what = "RRWT";
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("RRWT: duplicate tensor `{name}`")));
        }
    }
    if !r.bytes.is_empty() {
        return Err(Error::Format("RRWT: trailing bytes".into()));
    }
    Ok(map)
}

pub fn read_tensor<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_tensor<T: Element>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_weights<T: Element>(path: &Path) -> Result<WeightMap<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_weights<T: Element>(path: &Path, weights: &WeightMap<T>) -> Result<()> {
    fs::write(path, encode_weights(weights)?).map_err(|e| Error::io(path, e))
}
