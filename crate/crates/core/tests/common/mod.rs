#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrnet_core::{Result, Shape, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn uniform32(rng: &mut ChaCha8Rng, shape: Shape, lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-3;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn loss_of<F>(inputs: &[Tensor<f64>], target: &Tensor<f64>, f: &F, grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(grad)))
        .collect();
    let y = f(&mut tape, &vars)?;
    let loss = tape.half_squared_error(y, target)?;
    Ok((tape, vars, loss))
}

/// Largest relative error between the tape gradient of
/// `0.5 * |f(inputs) - target|^2` and central differences over every input
/// element.
pub fn max_grad_error<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eps = 1e-6;
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
    let y = f(&mut probe, &vars).unwrap();
    let target = uniform(&mut rng(seed), probe.value(y).shape(), -1.0, 1.0);

    let (mut tape, vars, loss) = loss_of(inputs, &target, &f, true).unwrap();
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let eval = |delta: f64| {
                let mut moved = inputs.to_vec();
                moved[i].data_mut()[k] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = moved.into_iter().map(|m| t.leaf(m)).collect();
                let y = f(&mut t, &vs).unwrap();
                t.take_value(y)
            };
            let (plus, minus) = (eval(eps), eval(-eps));
            // Loss difference element by element, free of cancellation
            // between two large totals.
            let diff: f64 = plus
                .data()
                .iter()
                .zip(minus.data())
                .zip(target.data())
                .map(|((p, m), t)| 0.5 * (p - m) * (p + m - 2.0 * t))
                .sum();
            let numeric = diff / (2.0 * eps);
            worst = worst.max(rel_error(grads[i][k], numeric));
        }
    }
    worst
}
