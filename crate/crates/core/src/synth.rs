//! Synthetic stereo scenes: a planar disparity field, a procedurally
//! textured left view and the right view resampled from it.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format::write_tensor;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Disparity range as a fraction of the image width.
    pub min_disparity: f64,
    pub max_disparity: f64,
    /// Peak deviation of the texture from mid-grey.
    pub contrast: f64,
    /// Standard deviation of the additive image noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 32,
            width: 64,
            min_disparity: 0.03,
            max_disparity: 0.06,
            contrast: 0.5,
            noise: 0.02,
        }
    }
}

/// Network input `(1,6,h,w)` (left RGB then right RGB) and ground-truth
/// disparity `(1,1,h,w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

/// Sum of a few random oriented sinusoids per colour channel, in [0,1].
fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize, contrast: f64) -> Vec<Vec<f64>> {
    (0..3)
        .map(|_| {
            let waves: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    let angle = rng.gen_range(0.0..std::f64::consts::PI);
                    let freq = rng.gen_range(0.15..0.9);
                    (freq * angle.cos(), freq * angle.sin(), rng.gen_range(0.0..6.3), rng.gen_range(0.3..1.0))
                })
                .collect();
            let norm: f64 = waves.iter().map(|w| w.3).sum();
            let mut plane = Vec::with_capacity(h * w);
            for y in 0..h {
                for x in 0..w {
                    let v: f64 = waves
                        .iter()
                        .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                        .sum();
                    plane.push(0.5 + contrast * v / norm);
                }
            }
            plane
        })
        .collect()
}

pub fn generate_sample(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Sample> {
    let (h, w) = (cfg.height, cfg.width);
    if h == 0 || w == 0 || !(0.0..cfg.max_disparity).contains(&cfg.min_disparity) || cfg.noise < 0.0 {
        return Err(Error::invalid("generate_sample", format!("unusable settings {cfg:?}")));
    }
    // Plane: disparity ramps linearly from `lo` to `hi` along a random direction.
    let lo = rng.gen_range(cfg.min_disparity..cfg.max_disparity);
    let hi = rng.gen_range(cfg.min_disparity..cfg.max_disparity);
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let corners = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)].map(|(u, v): (f64, f64)| u * dx + v * dy);
    let (pmin, pmax) = corners
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &p| (a.min(p), b.max(p)));
    let mut disparity = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / (w.max(2) - 1) as f64, y as f64 / (h.max(2) - 1) as f64);
            let t = (u * dx + v * dy - pmin) / (pmax - pmin);
            disparity.push(lo + (hi - lo) * t);
        }
    }

    let left = texture(rng, h, w, cfg.contrast.clamp(0.0, 0.5));
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut input = vec![0f32; 6 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                // The right view sees each scene point shifted left by d * w.
                let src = (x as f64 + disparity[i] * w as f64).min((w - 1) as f64);
                let x0 = src.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let f = src - x0 as f64;
                let right = left[c][y * w + x0] * (1.0 - f) + left[c][y * w + x1] * f;
                let mut jitter = |v: f64| {
                    let n = if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0) as f32
                };
                input[c * h * w + i] = jitter(left[c][i]);
                input[(3 + c) * h * w + i] = jitter(right);
            }
        }
    }
    Ok(Sample {
        input: Tensor::from_vec(Shape::new(1, 6, h, w), input)?,
        target: Tensor::from_vec(Shape::new(1, 1, h, w), disparity.iter().map(|&d| d as f32).collect())?,
    })
}

pub fn generate_dataset(seed: u64, count: usize, cfg: &SynthConfig) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| generate_sample(&mut rng, cfg)).collect()
}

pub fn input_file_name(index: usize) -> String {
    format!("{index:03}_in.rrtn")
}

pub fn target_file_name(index: usize) -> String {
    format!("{index:03}_gt.rrtn")
}

/// Writes `NNN_in.rrtn` / `NNN_gt.rrtn` pairs into `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, s) in samples.iter().enumerate() {
        write_tensor(&dir.join(input_file_name(i)), &s.input)?;
        write_tensor(&dir.join(target_file_name(i)), &s.target)?;
    }
    Ok(())
}
