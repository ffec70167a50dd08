//! Static Params/MAdds/activation-memory accounting.
//!
//! One multiply-accumulate counts as one MAdd. Activations, interpolation and
//! concatenation cost nothing.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::config::GraphSpec;
use crate::error::{Error, Result};
use crate::graph::{build, LayerOp, NetworkGraph};
use crate::ops::ConvKind;
use crate::tensor::{Element, Shape, Tensor};

/// Input used for every complexity figure of the presets.
pub const REFERENCE_INPUT: Shape = Shape {
    n: 1,
    c: 6,
    h: 256,
    w: 512,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProfileOptions {
    /// Include bias vectors in parameter counts.
    pub count_bias: bool,
    /// Multiplies MAdds to cover this many forward passes.
    pub images: u64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            count_bias: true,
            images: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerProfile {
    pub name: String,
    pub kind: &'static str,
    pub out: Shape,
    pub params: u64,
    pub madds: u64,
    pub act_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileReport {
    pub input: Shape,
    pub layers: Vec<LayerProfile>,
    pub params: u64,
    pub madds: u64,
    pub act_bytes: u64,
}

pub const CSV_HEADER: &str = "layer,type,out_n,out_c,out_h,out_w,params,madds,act_bytes";

impl ProfileReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                l.name, l.kind, l.out.n, l.out.c, l.out.h, l.out.w, l.params, l.madds, l.act_bytes
            );
        }
        let _ = writeln!(s, "TOTAL,,,,,,{},{},{}", self.params, self.madds, self.act_bytes);
        s
    }
}

pub fn profile<T: Element>(g: &NetworkGraph<T>, input: Shape) -> Result<ProfileReport> {
    profile_with(g, input, ProfileOptions::default())
}

pub fn profile_with<T: Element>(g: &NetworkGraph<T>, input: Shape, opts: ProfileOptions) -> Result<ProfileReport> {
    let shapes = g.infer_shapes(input)?;
    let elem = T::DTYPE.size() as u64;
    let mut layers = Vec::with_capacity(shapes.len());
    for (node, &out) in g.nodes().iter().zip(&shapes) {
        let pixels = (out.n * out.h * out.w) as u64;
        let (params, madds) = match node.op {
            LayerOp::Conv {
                kind,
                c_in,
                c_out,
                k,
                bias,
                ..
            } => {
                let (c_in, c_out, k) = (c_in as u64, c_out as u64, k as u64);
                let weights = match kind {
                    ConvKind::Standard => k * k * c_in * c_out,
                    ConvKind::Depthwise => k * k * c_out,
                    ConvKind::Pointwise => c_in * c_out,
                };
                let b = if bias && opts.count_bias { c_out } else { 0 };
                (weights + b, weights * pixels * opts.images)
            }
            _ => (0, 0),
        };
        layers.push(LayerProfile {
            name: node.name.clone(),
            kind: node.op.type_name(),
            out,
            params,
            madds,
            act_bytes: out.numel() as u64 * elem,
        });
    }
    Ok(ProfileReport {
        input,
        params: layers.iter().map(|l| l.params).sum(),
        madds: layers.iter().map(|l| l.madds).sum(),
        act_bytes: layers.iter().map(|l| l.act_bytes).sum(),
        layers,
    })
}

/// Independent count: every stored weight element, and every multiply
/// visited by the convolution loops during a real forward pass on zeros.
pub fn brute_force_count<T: Element>(g: &NetworkGraph<T>, input: Shape) -> Result<(u64, u64)> {
    let counter = AtomicU64::new(0);
    g.forward_counted(&Tensor::zeros(input)?, Some(&counter))?;
    Ok((g.param_count(), counter.load(Ordering::Relaxed)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub name: String,
    pub r: usize,
    pub params: u64,
    pub madds: u64,
    /// Params minus the affine fit.
    pub residual: i64,
    pub madds_residual: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepTable {
    pub input: Shape,
    pub rows: Vec<SweepRow>,
    /// `params(r) = intercept + slope * r`
    pub intercept: i64,
    pub slope: i64,
    pub madds_intercept: i64,
    pub madds_slope: i64,
}

impl SweepTable {
    pub fn is_affine(&self) -> bool {
        self.rows.iter().all(|r| r.residual == 0 && r.madds_residual == 0)
    }

    /// Successive parameter increments between adjacent rows.
    pub fn increments(&self) -> Vec<i64> {
        self.rows
            .windows(2)
            .map(|w| w[1].params as i64 - w[0].params as i64)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "input {}x{}x{}x{}",
            self.input.n, self.input.c, self.input.h, self.input.w
        );
        let _ = writeln!(s, "{:<10} {:>2} {:>10} {:>8} {:>14} {:>8} {:>8}", "preset", "r", "params", "", "madds", "", "residual");
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:>2} {:>10} {:>7.2}M {:>14} {:>7.2}B {:>8}",
                row.name,
                row.r,
                row.params,
                row.params as f64 / 1e6,
                row.madds,
                row.madds as f64 / 1e9,
                row.residual
            );
        }
        let _ = writeln!(
            s,
            "fit: params = {} + {}*r, madds = {} + {}*r",
            self.intercept, self.slope, self.madds_intercept, self.madds_slope
        );
        s
    }
}

/// Exact integer line through the two extreme points.
fn exact_fit(points: &[(i64, i64)]) -> Result<(i64, i64)> {
    let (first, last) = (points[0], points[points.len() - 1]);
    if points.len() == 1 || first.0 == last.0 {
        return Ok((first.1, 0));
    }
    let (dy, dx) = (last.1 - first.1, last.0 - first.0);
    if dy % dx != 0 {
        return Err(Error::Metrics(format!(
            "affine fit has a non-integer slope {dy}/{dx}"
        )));
    }
    let slope = dy / dx;
    Ok((first.1 - slope * first.0, slope))
}

/// Profiles each spec at `input` (uniform `r` required) and fits
/// params and MAdds as affine functions of `r`.
pub fn profile_preset_sweep(specs: &[GraphSpec], input: Shape) -> Result<SweepTable> {
    if specs.is_empty() {
        return Err(Error::invalid("profile_preset_sweep", "no presets"));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let r = spec.uniform_r().ok_or_else(|| Error::ConfigValue {
            key: "stage.*.r".into(),
            message: format!("{} mixes repetition counts", spec.name),
        })?;
        let g = build::<f32>(spec)?;
        let rep = profile(&g, input)?;
        rows.push(SweepRow {
            name: spec.name.clone(),
            r,
            params: rep.params,
            madds: rep.madds,
            residual: 0,
            madds_residual: 0,
        });
    }
    rows.sort_by_key(|r| r.r);
    let pts = |f: fn(&SweepRow) -> u64| -> Vec<(i64, i64)> {
        rows.iter().map(|r| (r.r as i64, f(r) as i64)).collect()
    };
    let (intercept, slope) = exact_fit(&pts(|r| r.params))?;
    let (madds_intercept, madds_slope) = exact_fit(&pts(|r| r.madds))?;
    for row in &mut rows {
        let r = row.r as i64;
        row.residual = row.params as i64 - (intercept + slope * r);
        row.madds_residual = row.madds as i64 - (madds_intercept + madds_slope * r);
    }
    Ok(SweepTable {
        input,
        rows,
        intercept,
        slope,
        madds_intercept,
        madds_slope,
    })
}
