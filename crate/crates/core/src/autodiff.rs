//! Reverse-mode differentiation over a linear tape.
//!
//! Operations append nodes in execution order; [`Tape::backward`] walks them
//! in reverse, visiting each node once and accumulating gradients into every
//! input that requires them.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, ConvKind, ConvSpec, Geometry};
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: Geometry,
    },
    Activation(Activation, Var),
    ScaledSigmoid { x: Var, scale: T },
    Upsample(Var),
    Concat(Vec<Var>),
    Sum(Var),
    MeanAbsError { x: Var, target: Vec<T> },
    HalfSquaredError { x: Var, target: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        value.requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable parameter.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn conv(
        &mut self,
        kind: ConvKind,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        let bias_len = bias.map(|b| self.value(b).len());
        let geom = ops::geometry(
            kind,
            self.value(x).shape(),
            self.value(weight).shape(),
            bias_len,
            spec,
        )?;
        let out = ops::conv_forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
            None,
        );
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::from_parts(geom.out_shape(), out),
            Op::Conv {
                x,
                weight,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.conv(ConvKind::Standard, x, w, b, spec)
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.conv(ConvKind::Depthwise, x, w, b, spec)
    }

    pub fn pointwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.conv(ConvKind::Pointwise, x, w, b, spec)
    }

    pub fn activation(&mut self, act: Activation, x: Var) -> Var {
        let y = act.apply(self.value(x));
        self.push(y, Op::Activation(act, x), &[x])
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.activation(Activation::Elu, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn scaled_sigmoid(&mut self, x: Var, scale: T) -> Var {
        let y = ops::scaled_sigmoid(self.value(x), scale);
        self.push(y, Op::ScaledSigmoid { x, scale }, &[x])
    }

    pub fn upsample_bilinear_x2(&mut self, x: Var) -> Var {
        let y = ops::upsample_bilinear_x2(self.value(x));
        self.push(y, Op::Upsample(x), &[x])
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(xs.to_vec()), xs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x), &[x])
    }

    fn check_target(&self, op: &'static str, x: Var, target: &Tensor<T>) -> Result<()> {
        let (a, b) = (self.value(x).shape(), target.shape());
        if a != b {
            return Err(Error::InvalidShape {
                op,
                message: format!("prediction {a} vs target {b}"),
            });
        }
        Ok(())
    }

    /// `mean(|x - target|)` as a scalar.
    pub fn mean_abs_error(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_target("mean_abs_error", x, target)?;
        let n = T::from_usize(target.len()).expect("length fits");
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t).abs())
            .sum();
        let op = Op::MeanAbsError {
            x,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(total / n), op, &[x]))
    }

    /// `0.5 * sum((x - target)^2)` as a scalar.
    pub fn half_squared_error(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        self.check_target("half_squared_error", x, target)?;
        let half = T::from_f64_lossy(0.5);
        let total: T = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let op = Op::HalfSquaredError {
            x,
            target: target.data().to_vec(),
        };
        Ok(self.push(Tensor::scalar(half * total), op, &[x]))
    }

    /// Back-propagates from a scalar `loss`, replacing any earlier gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != Shape::new(1, 1, 1, 1) {
            return Err(Error::NonScalarLoss(shape.to_string()));
        }
        for node in &mut self.nodes[..=loss.0] {
            node.value.grad = None;
            if node.value.requires_grad {
                node.value.zero_grad();
            }
        }
        if !self.nodes[loss.0].value.requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].value.grad = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            let dy = self.nodes[i].value.grad.take().expect("grad allocated");
            let contributions = self.local_grads(i, &dy);
            self.nodes[i].value.grad = Some(dy);
            for (var, g) in contributions {
                let target = &mut self.nodes[var.0].value;
                if !target.requires_grad {
                    continue;
                }
                let acc = target.grad.as_mut().expect("grad allocated");
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a = *a + *v;
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn local_grads(&self, i: usize, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                weight,
                bias,
                geom,
            } => {
                if self.wants(*x) {
                    let g = ops::conv_backward_input(dy, self.value(*weight).data(), geom);
                    out.push((*x, g));
                }
                if self.wants(*weight) {
                    let g = ops::conv_backward_weight(dy, self.value(*x).data(), geom);
                    out.push((*weight, g));
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        out.push((*b, ops::conv_backward_bias(dy, geom)));
                    }
                }
            }
            Op::Activation(act, x) => {
                let xs = self.value(*x).data();
                let ys = node.value.data();
                let g = match act {
                    Activation::Elu => xs
                        .iter()
                        .zip(ys)
                        .zip(dy)
                        .map(|((&xv, &yv), &d)| if xv > T::zero() { d } else { d * (yv + T::one()) })
                        .collect(),
                    Activation::Relu => xs
                        .iter()
                        .zip(dy)
                        .map(|(&xv, &d)| if xv > T::zero() { d } else { T::zero() })
                        .collect(),
                };
                out.push((*x, g));
            }
            Op::ScaledSigmoid { x, scale } => {
                let g = node
                    .value
                    .data()
                    .iter()
                    .zip(dy)
                    .map(|(&y, &d)| {
                        let s = y / *scale;
                        d * *scale * s * (T::one() - s)
                    })
                    .collect();
                out.push((*x, g));
            }
            Op::Upsample(x) => {
                out.push((*x, ops::upsample_backward(dy, self.value(*x).shape())));
            }
            Op::Concat(xs) => {
                let parts: Vec<Shape> = xs.iter().map(|&v| self.value(v).shape()).collect();
                let grads = ops::concat_backward(dy, node.value.shape(), &parts);
                out.extend(xs.iter().copied().zip(grads));
            }
            Op::Sum(x) => {
                out.push((*x, vec![dy[0]; self.value(*x).len()]));
            }
            Op::MeanAbsError { x, target } => {
                let n = T::from_usize(target.len()).expect("length fits");
                let scale = dy[0] / n;
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let diff = p - t;
                        if diff > T::zero() {
                            scale
                        } else if diff < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                out.push((*x, g));
            }
            Op::HalfSquaredError { x, target } => {
                let g = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| dy[0] * (p - t))
                    .collect();
                out.push((*x, g));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(Shape::new(1, 2, 3, 3), 0.3).unwrap().with_requires_grad(true));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::ones(Shape::new(1, 2, 2, 2)).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn pointwise_weight_gradient_is_channel_sum() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|v| (v as f64 * 0.37).sin()).collect();
        let x_t = Tensor::from_vec(Shape::new(1, 2, 3, 4), data).unwrap();
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(x_t.clone());
        let w = tape.param(Tensor::full(Shape::new(3, 2, 1, 1), 0.5).unwrap());
        let y = tape.pointwise_conv2d(x, w, None, ConvSpec::default()).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        for o in 0..3 {
            for i in 0..2 {
                let want: f64 = x_t.data()[i * 12..(i + 1) * 12].iter().sum();
                assert!((g[o * 2 + i] - want).abs() < 1e-12);
            }
        }
        // the input did not ask for a gradient
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn concat_splits_gradient_to_both_paths() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::ones(Shape::new(1, 1, 2, 2)).unwrap());
        let b = tape.param(Tensor::ones(Shape::new(1, 2, 2, 2)).unwrap());
        let c = tape.concat_channels(&[a, b]).unwrap();
        let w = tape.leaf(Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.pointwise_conv2d(c, w, None, ConvSpec::default()).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 4]);
        assert_eq!(&tape.grad(b).unwrap()[..4], &[2.0; 4]);
        assert_eq!(&tape.grad(b).unwrap()[4..], &[3.0; 4]);
    }

    #[test]
    fn repeated_backward_does_not_double_count() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(Shape::new(1, 1, 2, 2), 2.0).unwrap());
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn mae_at_target_has_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let t = Tensor::full(Shape::new(1, 1, 2, 2), 0.1).unwrap();
        let x = tape.param(t.clone());
        let loss = tape.mean_abs_error(x, &t).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.value(loss).data(), &[0.0]);
        assert_eq!(tape.grad(x).unwrap(), &[0.0; 4]);
    }
}
