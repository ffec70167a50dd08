//! Repetition-reduction units, condensed decoding connections and the decoder
//! up-scaling layer, expressed as tape operations.

use indexmap::IndexMap;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::format::WeightMap;
use crate::ops::{Activation, ConvSpec};
use crate::tensor::Element;

/// Upper bound of the disparity head output.
pub const DISPARITY_SCALE: f64 = 0.3;

/// One encoder stage: `r` chained reduction/expansion units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RRBlockConfig {
    pub r: usize,
    /// Bottleneck width produced by each unit's 1x1 reduction.
    pub rr: usize,
    /// Width after the depthwise separable expansion.
    pub re: usize,
    /// Repetition `j` uses dilation `dilation_base * j`.
    pub dilation_base: usize,
    /// Downsample at the first repetition (strided 1x1 reduction) instead of
    /// the last one (strided depthwise convolution).
    pub stride_first: bool,
    /// Whether the stage halves the spatial resolution at all.
    pub downsample: bool,
}

impl Default for RRBlockConfig {
    fn default() -> Self {
        RRBlockConfig {
            r: 4,
            rr: 16,
            re: 32,
            dilation_base: 6,
            stride_first: false,
            downsample: true,
        }
    }
}

impl RRBlockConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Error::ConfigValue {
            key: key.to_string(),
            message,
        };
        if self.r == 0 {
            return Err(bad("r", "repetition count must be >= 1".into()));
        }
        if self.rr == 0 {
            return Err(bad("rr", "reduction width must be >= 1".into()));
        }
        if self.re < self.rr {
            return Err(bad("re", format!("expansion width {} is below rr = {}", self.re, self.rr)));
        }
        if self.dilation_base == 0 {
            return Err(bad("dilation_base", "must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dilation(&self, j: usize) -> usize {
        self.dilation_base * j
    }

    /// `(reduction stride, depthwise stride)` of repetition `j`.
    pub fn unit_strides(&self, j: usize) -> (usize, usize) {
        match (self.downsample, self.stride_first) {
            (false, _) => (1, 1),
            (true, true) if j == 1 => (2, 1),
            (true, false) if j == self.r => (1, 2),
            _ => (1, 1),
        }
    }

    /// Whether the stacked bottlenecks sit below the stage input resolution.
    pub fn cdc_downsampled(&self) -> bool {
        self.downsample && self.stride_first
    }
}

pub fn unit_weight_name(stage: usize, j: usize, part: &str) -> String {
    format!("stage{stage}.rep{j}.{part}")
}

pub fn cdc_weight_name(stage: usize) -> String {
    format!("cdc{stage}.reduce")
}

pub fn decoder_weight_name(layer: usize) -> String {
    format!("dec{layer}.conv")
}

pub const HEAD_WEIGHT_NAME: &str = "head.conv";

/// Name of the bias tensor paired with a convolution kernel.
pub fn bias_name(weight: &str) -> String {
    format!("{weight}.bias")
}

/// Kernel and optional bias of one convolution on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct RRUnitParams {
    pub reduce: ConvVars,
    pub dw: ConvVars,
    pub pw: ConvVars,
}

/// Weight tensors registered as tape leaves, looked up by name.
#[derive(Clone, Debug, Default)]
pub struct ParamTable {
    vars: IndexMap<String, Var>,
}

impl ParamTable {
    pub fn register<T: Element>(tape: &mut Tape<T>, weights: &WeightMap<T>, requires_grad: bool) -> Self {
        let vars = weights
            .iter()
            .map(|(name, t)| {
                let var = tape.leaf(t.clone().with_requires_grad(requires_grad));
                (name.clone(), var)
            })
            .collect();
        ParamTable { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    pub fn conv(&self, name: &str) -> Result<ConvVars> {
        Ok(ConvVars {
            weight: self.get(name)?,
            bias: self.vars.get(&bias_name(name)).copied(),
        })
    }

    pub fn unit(&self, stage: usize, j: usize) -> Result<RRUnitParams> {
        Ok(RRUnitParams {
            reduce: self.conv(&unit_weight_name(stage, j, "reduce"))?,
            dw: self.conv(&unit_weight_name(stage, j, "dw"))?,
            pw: self.conv(&unit_weight_name(stage, j, "pw"))?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Per-repetition bottlenecks of one stage and their linear reduction.
#[derive(Clone, Debug)]
pub struct CdcStack {
    pub features: Vec<Var>,
    pub reduced: Option<Var>,
    pub rcn: usize,
}

impl CdcStack {
    pub fn stacked_channels<T: Element>(&self, tape: &Tape<T>) -> usize {
        self.features.iter().map(|&f| tape.value(f).shape().c).sum()
    }
}

/// One repetition: linear 1x1 reduction to `rr` channels (the bottleneck),
/// then a dilated 3x3 depthwise and a 1x1 pointwise expansion to `re`
/// channels followed by the activation.
pub fn rr_unit_forward<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: &RRBlockConfig,
    j: usize,
    params: &RRUnitParams,
    act: Activation,
) -> Result<(Var, Var)> {
    if j == 0 || j > cfg.r {
        return Err(Error::invalid(
            "rr_unit_forward",
            format!("repetition index {j} outside 1..={}", cfg.r),
        ));
    }
    let (reduce_stride, dw_stride) = cfg.unit_strides(j);
    let bottleneck = tape.pointwise_conv2d(
        x,
        params.reduce.weight,
        params.reduce.bias,
        ConvSpec::strided(reduce_stride),
    )?;
    let spec = ConvSpec {
        stride: dw_stride,
        dilation: cfg.dilation(j),
        ..ConvSpec::default()
    };
    let dw = tape.depthwise_conv2d(bottleneck, params.dw.weight, params.dw.bias, spec)?;
    let pw = tape.pointwise_conv2d(dw, params.pw.weight, params.pw.bias, ConvSpec::default())?;
    Ok((bottleneck, tape.activation(act, pw)))
}

/// Chains `cfg.r` units, collecting every bottleneck in repetition order.
pub fn rr_block_forward<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: &RRBlockConfig,
    units: &[RRUnitParams],
    act: Activation,
    rcn: usize,
) -> Result<(Var, CdcStack)> {
    cfg.validate()?;
    if units.len() != cfg.r {
        return Err(Error::invalid(
            "rr_block_forward",
            format!("{} unit parameter sets for r = {}", units.len(), cfg.r),
        ));
    }
    let mut cur = x;
    let mut features = Vec::with_capacity(cfg.r);
    for (j, unit) in (1..=cfg.r).zip(units) {
        let (bottleneck, expanded) = rr_unit_forward(tape, cur, cfg, j, unit, act)?;
        features.push(bottleneck);
        cur = expanded;
    }
    Ok((
        cur,
        CdcStack {
            features,
            reduced: None,
            rcn,
        },
    ))
}

/// Concatenates the stacked bottlenecks and compresses them with a 1x1
/// convolution; the result carries no activation.
pub fn cdc_reduce<T: Element>(tape: &mut Tape<T>, cdc: &mut CdcStack, conv: &ConvVars) -> Result<Var> {
    if cdc.features.is_empty() {
        return Err(Error::invalid("cdc_reduce", "empty CDC stack"));
    }
    let stacked = tape.concat_channels(&cdc.features)?;
    let out_c = tape.value(conv.weight).shape().n;
    if out_c != cdc.rcn {
        return Err(Error::ShapeMismatch {
            op: "cdc_reduce",
            axis: "rcn",
            expected: cdc.rcn,
            actual: out_c,
        });
    }
    let reduced = tape.pointwise_conv2d(stacked, conv.weight, conv.bias, ConvSpec::default())?;
    cdc.reduced = Some(reduced);
    Ok(reduced)
}

/// x2 bilinear upsampling, channel concatenation with the encoder tensor and a
/// 3x3 convolution with activation.
pub fn decoder_upscale_layer<T: Element>(
    tape: &mut Tape<T>,
    prev: Var,
    skip: Option<Var>,
    conv: &ConvVars,
    act: Activation,
) -> Result<Var> {
    let up = tape.upsample_bilinear_x2(prev);
    let joined = match skip {
        Some(s) => {
            let (a, b) = (tape.value(up).shape(), tape.value(s).shape());
            if (a.n, a.h, a.w) != (b.n, b.h, b.w) {
                return Err(Error::InvalidShape {
                    op: "decoder_upscale_layer",
                    message: format!("upsampled input {a} does not match skip {b}"),
                });
            }
            tape.concat_channels(&[up, s])?
        }
        None => up,
    };
    let y = tape.conv2d(joined, conv.weight, conv.bias, ConvSpec::default())?;
    Ok(tape.activation(act, y))
}

/// 3x3 convolution to one channel, then `0.3 * sigmoid`.
pub fn disparity_head<T: Element>(tape: &mut Tape<T>, x: Var, conv: &ConvVars) -> Result<Var> {
    let y = tape.conv2d(x, conv.weight, conv.bias, ConvSpec::default())?;
    Ok(tape.scaled_sigmoid(y, T::from_f64_lossy(DISPARITY_SCALE)))
}
