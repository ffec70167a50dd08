//! Convolution, activation, upsampling and concatenation kernels.
//!
//! Every kernel parallelizes over independent output planes and accumulates
//! each output element in a fixed loop order, so results are bitwise identical
//! for any worker count.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; odd totals put the
    /// extra row/column on the bottom/right.
    #[default]
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvKind {
    Standard,
    Depthwise,
    Pointwise,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "conv",
            ConvKind::Depthwise => "dwconv",
            ConvKind::Pointwise => "pwconv",
        }
    }

    fn op(self) -> &'static str {
        match self {
            ConvKind::Standard => "conv2d",
            ConvKind::Depthwise => "depthwise_conv2d",
            ConvKind::Pointwise => "pointwise_conv2d",
        }
    }
}

/// Stride, dilation and padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }
}

impl ConvSpec {
    pub fn strided(stride: usize) -> Self {
        ConvSpec {
            stride,
            ..Self::default()
        }
    }

    pub fn dilated(dilation: usize) -> Self {
        ConvSpec {
            dilation,
            ..Self::default()
        }
    }
}

/// Weights and geometry of one convolution.
///
/// `kernel` is shaped `(c_out, c_in, k, k)` for standard and pointwise
/// convolutions and `(c, 1, k, k)` for depthwise ones.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl<T: Element> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Option<Vec<T>>, spec: ConvSpec) -> Self {
        ConvParams {
            kernel,
            bias,
            stride: spec.stride,
            dilation: spec.dilation,
            padding: spec.padding,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec {
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding,
        }
    }
}

/// Output length of one spatial axis.
pub fn conv_out_len(
    input: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Option<usize> {
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid => {
            let span = (k - 1) * dilation + 1;
            (input >= span).then(|| (input - span) / stride + 1)
        }
    }
}

/// Resolved loop bounds for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub groups: usize,
    pub stride: usize,
    pub dilation: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl Geometry {
    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.c_out, self.ho, self.wo)
    }

    fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }
}

pub(crate) fn geometry(
    kind: ConvKind,
    x: Shape,
    kernel: Shape,
    bias_len: Option<usize>,
    spec: ConvSpec,
) -> Result<Geometry> {
    let op = kind.op();
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(Error::invalid(op, "stride and dilation must be >= 1"));
    }
    if kernel.h != kernel.w {
        return Err(Error::ShapeMismatch {
            op,
            axis: "kernel_w",
            expected: kernel.h,
            actual: kernel.w,
        });
    }
    let k = kernel.h;
    if k.is_multiple_of(2) {
        return Err(Error::invalid(op, format!("kernel size {k} must be odd")));
    }
    let (c_out, groups) = match kind {
        ConvKind::Standard | ConvKind::Pointwise => {
            if kind == ConvKind::Pointwise && (k != 1 || spec.dilation != 1) {
                return Err(Error::invalid(
                    op,
                    format!("needs k = 1 and dilation = 1, got k = {k}, dilation = {}", spec.dilation),
                ));
            }
            if kernel.c != x.c {
                return Err(Error::ShapeMismatch {
                    op,
                    axis: "c_in",
                    expected: kernel.c,
                    actual: x.c,
                });
            }
            (kernel.n, 1)
        }
        ConvKind::Depthwise => {
            if kernel.c != 1 {
                return Err(Error::ShapeMismatch {
                    op,
                    axis: "kernel_c",
                    expected: 1,
                    actual: kernel.c,
                });
            }
            if kernel.n != x.c {
                return Err(Error::ShapeMismatch {
                    op,
                    axis: "c",
                    expected: kernel.n,
                    actual: x.c,
                });
            }
            (x.c, x.c)
        }
    };
    if let Some(len) = bias_len {
        if len != c_out {
            return Err(Error::ShapeMismatch {
                op,
                axis: "bias",
                expected: c_out,
                actual: len,
            });
        }
    }
    let out = |len: usize, axis: &str| {
        conv_out_len(len, k, spec.stride, spec.dilation, spec.padding).ok_or_else(|| {
            Error::InvalidShape {
                op,
                message: format!(
                    "VALID padding leaves no output along {axis}: input {len}, kernel {k}, dilation {}",
                    spec.dilation
                ),
            }
        })
    };
    let ho = out(x.h, "h")?;
    let wo = out(x.w, "w")?;
    let pad = |len: usize, out_len: usize| match spec.padding {
        Padding::Valid => 0,
        Padding::Same => {
            let needed = (out_len - 1) * spec.stride + (k - 1) * spec.dilation + 1;
            needed.saturating_sub(len) / 2
        }
    };
    Ok(Geometry {
        n: x.n,
        c_in: x.c,
        h: x.h,
        w: x.w,
        c_out,
        k,
        groups,
        stride: spec.stride,
        dilation: spec.dilation,
        ho,
        wo,
        pad_top: pad(x.h, ho),
        pad_left: pad(x.w, wo),
    })
}

/// Range of output indices `o` whose input index `o * stride + offset - pad`
/// lies in `0..in_len`.
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let top = in_len + pad;
    let hi = if top > offset {
        ((top - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlation forward pass over grouped channels.
///
/// `counter`, when given, receives the number of multiply-accumulate slots the
/// loop nest visits (padded taps included).
pub(crate) fn conv_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &Geometry,
    counter: Option<&AtomicU64>,
) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let (cin_pg, cout_pg, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let mut out = vec![T::zero(); g.n * g.c_out * plane_out];
    out.par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, oc) = (idx / g.c_out, idx % g.c_out);
            let group = oc / cout_pg;
            if let Some(b) = bias {
                plane.fill(b[oc]);
            }
            let mut visits = 0u64;
            for icl in 0..cin_pg {
                let ic = group * cin_pg + icl;
                let xin = &x[(n * g.c_in + ic) * plane_in..][..plane_in];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(ky * g.dilation, g.pad_top, g.stride, g.h, g.ho);
                    for kx in 0..k {
                        visits += plane_out as u64;
                        let wv = weight[((oc * cin_pg + icl) * k + ky) * k + kx];
                        let (ox0, ox1) =
                            valid_range(kx * g.dilation, g.pad_left, g.stride, g.w, g.wo);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky * g.dilation - g.pad_top;
                            let ix0 = ox0 * g.stride + kx * g.dilation - g.pad_left;
                            let orow = &mut plane[oy * g.wo + ox0..oy * g.wo + ox1];
                            let irow = &xin[iy * g.w..(iy + 1) * g.w];
                            if g.stride == 1 {
                                let len = orow.len();
                                for (o, &i) in orow.iter_mut().zip(&irow[ix0..ix0 + len]) {
                                    *o = *o + wv * i;
                                }
                            } else {
                                for (t, o) in orow.iter_mut().enumerate() {
                                    *o = *o + wv * irow[ix0 + t * g.stride];
                                }
                            }
                        }
                    }
                }
            }
            if let Some(c) = counter {
                c.fetch_add(visits, Ordering::Relaxed);
            }
        });
    out
}

/// Gradient with respect to the convolution input.
pub(crate) fn conv_backward_input<T: Element>(dy: &[T], weight: &[T], g: &Geometry) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let (cin_pg, cout_pg, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let mut dx = vec![T::zero(); g.n * g.c_in * plane_in];
    dx.par_chunks_mut(plane_in)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, ic) = (idx / g.c_in, idx % g.c_in);
            let (group, icl) = (ic / cin_pg, ic % cin_pg);
            for ocl in 0..cout_pg {
                let oc = group * cout_pg + ocl;
                let dyp = &dy[(n * g.c_out + oc) * plane_out..][..plane_out];
                for ky in 0..k {
                    let (oy0, oy1) = valid_range(ky * g.dilation, g.pad_top, g.stride, g.h, g.ho);
                    for kx in 0..k {
                        let wv = weight[((oc * cin_pg + icl) * k + ky) * k + kx];
                        let (ox0, ox1) =
                            valid_range(kx * g.dilation, g.pad_left, g.stride, g.w, g.wo);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky * g.dilation - g.pad_top;
                            let row = &mut plane[iy * g.w..(iy + 1) * g.w];
                            let drow = &dyp[oy * g.wo + ox0..oy * g.wo + ox1];
                            let ix0 = ox0 * g.stride + kx * g.dilation - g.pad_left;
                            if g.stride == 1 {
                                for (r, &d) in row[ix0..ix0 + drow.len()].iter_mut().zip(drow) {
                                    *r = *r + wv * d;
                                }
                            } else {
                                for (t, &d) in drow.iter().enumerate() {
                                    let r = &mut row[ix0 + t * g.stride];
                                    *r = *r + wv * d;
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

const LANES: usize = 8;

fn dot_lanes<T: Element>(lanes: &mut [T; LANES], a: &[T], b: &[T]) {
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            lanes[i] = lanes[i] + xa[i] * xb[i];
        }
    }
    for (i, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        lanes[i] = lanes[i] + x * y;
    }
}

/// Gradient with respect to the kernel.
pub(crate) fn conv_backward_weight<T: Element>(dy: &[T], x: &[T], g: &Geometry) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let (cin_pg, cout_pg, k) = (g.cin_per_group(), g.cout_per_group(), g.k);
    let per_oc = cin_pg * k * k;
    let mut dw = vec![T::zero(); g.c_out * per_oc];
    dw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, chunk)| {
        let group = oc / cout_pg;
        for icl in 0..cin_pg {
            let ic = group * cin_pg + icl;
            for ky in 0..k {
                let (oy0, oy1) = valid_range(ky * g.dilation, g.pad_top, g.stride, g.h, g.ho);
                for kx in 0..k {
                    let (ox0, ox1) = valid_range(kx * g.dilation, g.pad_left, g.stride, g.w, g.wo);
                    // Fixed-width lanes: vectorizable, and the summation
                    // order never depends on scheduling.
                    let mut lanes = [T::zero(); LANES];
                    if ox0 < ox1 {
                        for n in 0..g.n {
                            let dyp = &dy[(n * g.c_out + oc) * plane_out..][..plane_out];
                            let xin = &x[(n * g.c_in + ic) * plane_in..][..plane_in];
                            for oy in oy0..oy1 {
                                let iy = oy * g.stride + ky * g.dilation - g.pad_top;
                                let drow = &dyp[oy * g.wo + ox0..oy * g.wo + ox1];
                                let ix0 = ox0 * g.stride + kx * g.dilation - g.pad_left;
                                let irow = &xin[iy * g.w..(iy + 1) * g.w];
                                if g.stride == 1 {
                                    dot_lanes(&mut lanes, drow, &irow[ix0..ix0 + drow.len()]);
                                } else {
                                    for (t, &d) in drow.iter().enumerate() {
                                        lanes[t % LANES] = lanes[t % LANES] + d * irow[ix0 + t * g.stride];
                                    }
                                }
                            }
                        }
                    }
                    chunk[(icl * k + ky) * k + kx] = lanes.iter().fold(T::zero(), |a, &b| a + b);
                }
            }
        }
    });
    dw
}

pub(crate) fn conv_backward_bias<T: Element>(dy: &[T], g: &Geometry) -> Vec<T> {
    let plane_out = g.ho * g.wo;
    (0..g.c_out)
        .map(|oc| {
            let mut acc = T::zero();
            for n in 0..g.n {
                for &v in &dy[(n * g.c_out + oc) * plane_out..][..plane_out] {
                    acc = acc + v;
                }
            }
            acc
        })
        .collect()
}

fn run_conv<T: Element>(
    kind: ConvKind,
    x: &Tensor<T>,
    p: &ConvParams<T>,
    counter: Option<&AtomicU64>,
) -> Result<Tensor<T>> {
    let g = geometry(
        kind,
        x.shape(),
        p.kernel.shape(),
        p.bias.as_ref().map(Vec::len),
        p.spec(),
    )?;
    let out = conv_forward(x.data(), p.kernel.data(), p.bias.as_deref(), &g, counter);
    Ok(Tensor::from_parts(g.out_shape(), out))
}

/// Standard 2-D cross-correlation.
pub fn conv2d<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    run_conv(ConvKind::Standard, x, p, None)
}

/// Per-channel spatial convolution; `p.dilation` sets the atrous rate.
pub fn depthwise_conv2d<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    run_conv(ConvKind::Depthwise, x, p, None)
}

/// Per-pixel linear map across channels (1x1 kernel), no activation.
pub fn pointwise_conv2d<T: Element>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    run_conv(ConvKind::Pointwise, x, p, None)
}

pub(crate) fn map<T: Element>(x: &Tensor<T>, f: impl Fn(T) -> T + Sync + Send) -> Tensor<T> {
    let data = x.data().par_iter().map(|&v| f(v)).collect();
    Tensor::from_parts(x.shape(), data)
}

pub(crate) fn elu_scalar<T: Element>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        v.exp_m1()
    }
}

pub(crate) fn sigmoid_scalar<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn elu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, elu_scalar)
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    map(x, |v| v.max(T::zero()))
}

/// `scale * sigmoid(x)`.
pub fn scaled_sigmoid<T: Element>(x: &Tensor<T>, scale: T) -> Tensor<T> {
    map(x, |v| scale * sigmoid_scalar(v))
}

/// Nonlinearity applied after decoder convolutions and RR expansions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Elu,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "elu" => Some(Activation::Elu),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn apply<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => relu(x),
        }
    }
}

/// Source taps `(lo, hi, frac)` of a corner-aligned x2 linear resampling.
fn upsample_taps(in_len: usize) -> Vec<(usize, usize, f64)> {
    let out_len = in_len * 2;
    (0..out_len)
        .map(|o| {
            let src = if in_len == 1 {
                0.0
            } else {
                o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            };
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear x2 upsampling with corner alignment.
pub fn upsample_bilinear_x2<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (ho, wo) = (s.h * 2, s.w * 2);
    let ty = upsample_taps(s.h);
    let tx = upsample_taps(s.w);
    let mut out = vec![T::zero(); s.n * s.c * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let src = &x.data()[idx * s.plane()..][..s.plane()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                plane[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    });
    Tensor::from_parts(Shape::new(s.n, s.c, ho, wo), out)
}

pub(crate) fn upsample_backward<T: Element>(dy: &[T], input: Shape) -> Vec<T> {
    let (h, w) = (input.h, input.w);
    let wo = w * 2;
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut dx = vec![T::zero(); input.numel()];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(idx, plane)| {
        let g = &dy[idx * 4 * h * w..][..4 * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let d = g[oy * wo + ox];
                let top = d * (T::one() - fy);
                let bot = d * fy;
                plane[y0 * w + x0] = plane[y0 * w + x0] + top * (T::one() - fx);
                plane[y0 * w + x1] = plane[y0 * w + x1] + top * fx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + bot * (T::one() - fx);
                plane[y1 * w + x1] = plane[y1 * w + x1] + bot * fx;
            }
        }
    });
    dx
}

pub(crate) fn concat_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = *shapes
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
    let mut c = 0;
    for (index, s) in shapes.iter().enumerate() {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ConcatMismatch {
                index,
                expected: first.to_string(),
                actual: s.to_string(),
            });
        }
        c += s.c;
    }
    Ok(Shape::new(first.n, c, first.h, first.w))
}

/// Channelwise concatenation in input order.
pub fn concat_channels<T: Element>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<Shape> = xs.iter().map(|t| t.shape()).collect();
    let out = concat_shape(&shapes)?;
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..out.n {
        for t in xs {
            let per = t.shape().c * out.plane();
            data.extend_from_slice(&t.data()[n * per..(n + 1) * per]);
        }
    }
    Ok(Tensor::from_parts(out, data))
}

/// Splits a concatenated gradient back into per-input slices.
pub(crate) fn concat_backward<T: Element>(dy: &[T], out: Shape, parts: &[Shape]) -> Vec<Vec<T>> {
    let mut grads: Vec<Vec<T>> = parts.iter().map(|s| Vec::with_capacity(s.numel())).collect();
    let mut offset = 0;
    for n in 0..out.n {
        for (g, s) in grads.iter_mut().zip(parts) {
            let per = s.c * out.plane();
            g.extend_from_slice(&dy[offset..offset + per]);
            offset += per;
        }
        debug_assert_eq!(offset, (n + 1) * out.c * out.plane());
    }
    grads
}

/// Bilinear resampling to an arbitrary size with corner alignment.
pub fn resize_bilinear<T: Element>(x: &Tensor<T>, ho: usize, wo: usize) -> Result<Tensor<T>> {
    if ho == 0 || wo == 0 {
        return Err(Error::invalid("resize_bilinear", "target size must be positive"));
    }
    let s = x.shape();
    let taps = |in_len: usize, out_len: usize| -> Vec<(usize, usize, f64)> {
        (0..out_len)
            .map(|o| {
                let src = if out_len == 1 || in_len == 1 {
                    0.0
                } else {
                    o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
                };
                let lo = (src.floor() as usize).min(in_len - 1);
                (lo, (lo + 1).min(in_len - 1), src - lo as f64)
            })
            .collect()
    };
    let ty = taps(s.h, ho);
    let tx = taps(s.w, wo);
    let mut out = vec![T::zero(); s.n * s.c * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let src = &x.data()[idx * s.plane()..][..s.plane()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                plane[oy * wo + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    });
    Ok(Tensor::from_parts(Shape::new(s.n, s.c, ho, wo), out))
}
