//! Finite-difference verification of the network's analytic gradients.
//!
//! The loss is half the summed squared error against a fixed random target,
//! which is smooth in every weight.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::ConnectionMode;
use crate::error::{Error, Result};
use crate::graph::{build, NetworkGraph};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub eps: f64,
    /// Drives weight selection, the input and the target.
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Denominator floor of the relative error, so that weights with a
    /// vanishing gradient are judged on absolute agreement.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            samples: 200,
            eps: 1e-6,
            seed: 0,
            height: 32,
            width: 64,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub input: Shape,
    pub loss: f64,
    pub checks: Vec<WeightCheck>,
    pub max_rel_error: f64,
    /// L2 norm of all stage-1 weight gradients in the checked graph.
    pub stage1_norm: f64,
    /// The same norm with the graph rebuilt in the other connection mode;
    /// `None` when the graph has no spec to rebuild from.
    pub cdc_stage1_norm: Option<f64>,
    pub skip_stage1_norm: Option<f64>,
    /// Encoder bottleneck and reduction weights whose whole gradient is zero.
    pub dead_reductions: Vec<String>,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let s = self.input;
        let mut out = format!(
            "input {}x{}x{}x{}  loss {:.6e}\nchecked {} weights, max relative error {:.3e}\n",
            s.n,
            s.c,
            s.h,
            s.w,
            self.loss,
            self.checks.len(),
            self.max_rel_error
        );
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
        out.push_str(&format!(
            "stage-1 gradient norm: cdc {}  skip {}\n",
            fmt(self.cdc_stage1_norm),
            fmt(self.skip_stage1_norm)
        ));
        if self.dead_reductions.is_empty() {
            out.push_str("every reduction weight receives gradient\n");
        } else {
            out.push_str(&format!("zero gradient: {}\n", self.dead_reductions.join(", ")));
        }
        out
    }
}

fn is_reduction(name: &str) -> bool {
    (name.starts_with("stage") && name.ends_with(".reduce")) || (name.starts_with("cdc") && name.ends_with(".reduce"))
}

/// `L(plus) - L(minus)` summed pixel by pixel, which avoids cancelling two
/// large totals.
fn loss_difference(plus: &Tensor<f64>, minus: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
    plus.data()
        .iter()
        .zip(minus.data())
        .zip(target.data())
        .map(|((p, m), t)| 0.5 * (p - m) * (p + m - 2.0 * t))
        .sum()
}

/// Loss and every weight gradient, by name.
/// Per-weight gradients in graph weight order.
type NamedGrads = Vec<(String, Vec<f64>)>;

fn analytic(g: &NetworkGraph<f64>, x: &Tensor<f64>, target: &Tensor<f64>) -> Result<(f64, NamedGrads)> {
    let out = g.output_index().ok_or_else(|| Error::invalid("gradcheck", "empty graph"))?;
    let mut tape = Tape::new();
    let params = g.register(&mut tape, true);
    let xv = tape.leaf(x.clone());
    let vars = g.forward_on_tape(&mut tape, xv, &params)?;
    let loss = tape.half_squared_error(vars[out], target)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|(name, v)| {
            let grad = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default();
            (name.to_string(), grad)
        })
        .collect();
    Ok((value, grads))
}

fn stage1_norm(grads: &[(String, Vec<f64>)]) -> f64 {
    grads
        .iter()
        .filter(|(n, _)| n.starts_with("stage1."))
        .flat_map(|(_, g)| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Compares analytic gradients of `opts.samples` random scalar weights with
/// central differences and reports stage-1 gradient norms in both
/// connection modes.
pub fn gradcheck(g: &NetworkGraph<f64>, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(Error::invalid("gradcheck", format!("eps {} must be positive", opts.eps)));
    }
    let input = Shape::new(1, g.input_channels(), opts.height, opts.width);
    g.check_input(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x = Tensor::from_vec(input, (0..input.numel()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let tshape = Shape::new(1, 1, input.h, input.w);
    let target = Tensor::from_vec(tshape, (0..tshape.numel()).map(|_| rng.gen_range(0.0..0.3)).collect())?;

    let (loss, grads) = analytic(g, &x, &target)?;
    let total: usize = g.weights().values().map(Tensor::len).sum();
    let mut picks = sample(&mut rng, total, opts.samples.min(total)).into_vec();
    picks.sort_unstable();

    let mut probe = g.clone();
    let mut checks = Vec::with_capacity(picks.len());
    let (mut offset, mut pi) = (0usize, 0usize);
    for (name, grad) in &grads {
        let len = grad.len().max(g.weights()[name.as_str()].len());
        while pi < picks.len() && picks[pi] < offset + len {
            let index = picks[pi] - offset;
            let a = grad.get(index).copied().unwrap_or(0.0);
            let orig = g.weights()[name.as_str()].data()[index];
            let mut eval = |v: f64| -> Result<Tensor<f64>> {
                probe.weight_data_mut(name).expect("own weight")[index] = v;
                probe.forward(&x)
            };
            let (plus, minus) = (eval(orig + opts.eps)?, eval(orig - opts.eps)?);
            eval(orig)?;
            let numeric = loss_difference(&plus, &minus, &target) / (2.0 * opts.eps);
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            checks.push(WeightCheck {
                name: name.clone(),
                index,
                analytic: a,
                numeric,
                rel_error,
            });
            pi += 1;
        }
        offset += len;
    }

    let dead_reductions = grads
        .iter()
        .filter(|(n, gr)| is_reduction(n) && gr.iter().all(|&v| v == 0.0))
        .map(|(n, _)| n.clone())
        .collect();

    let own = stage1_norm(&grads);
    let (mut cdc, mut skip) = (None, None);
    if let Some(spec) = g.spec() {
        let other_mode = match spec.connection {
            ConnectionMode::Cdc => ConnectionMode::Skip,
            ConnectionMode::Skip => ConnectionMode::Cdc,
        };
        let mut other = build::<f64>(&spec.clone().with_connection(other_mode))?;
        // Shared layers take the checked graph's weights, not fresh ones.
        let shared: Vec<(String, Tensor<f64>)> = other
            .weights()
            .keys()
            .filter_map(|k| g.weights().get(k).map(|t| (k.clone(), t.clone())))
            .collect();
        for (k, t) in shared {
            if t.shape() == other.weights()[k.as_str()].shape() {
                other.weight_data_mut(&k).expect("present").copy_from_slice(t.data());
            }
        }
        let (_, other_grads) = analytic(&other, &x, &target)?;
        let other_norm = stage1_norm(&other_grads);
        match spec.connection {
            ConnectionMode::Cdc => (cdc, skip) = (Some(own), Some(other_norm)),
            ConnectionMode::Skip => (cdc, skip) = (Some(other_norm), Some(own)),
        }
    }

    Ok(GradcheckReport {
        input,
        loss,
        max_rel_error: checks.iter().map(|c| c.rel_error).fold(0.0, f64::max),
        checks,
        stage1_norm: own,
        cdc_stage1_norm: cdc,
        skip_stage1_norm: skip,
        dead_reductions,
    })
}
