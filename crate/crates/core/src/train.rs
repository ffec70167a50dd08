//! Supervised toy training: mean absolute disparity error and plain
//! gradient descent.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::read_tensor;
use crate::graph::NetworkGraph;
use crate::synth::{input_file_name, target_file_name, Sample};
use crate::tensor::{Element, Shape, Tensor};
use crate::autodiff::Tape;

fn check_target<T: Element>(g: &NetworkGraph<T>, x: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    let (xs, ts) = (x.shape(), target.shape());
    if ts != Shape::new(xs.n, 1, xs.h, xs.w) {
        return Err(Error::InvalidShape {
            op: "train_step",
            message: format!("target {ts} does not match input {xs}"),
        });
    }
    g.check_input(xs)
}

/// One descent step on `(x, target)`; returns the loss before the update.
pub fn train_step<T: Element>(g: &mut NetworkGraph<T>, x: &Tensor<T>, target: &Tensor<T>, lr: f64) -> Result<f64> {
    check_target(g, x, target)?;
    let Some(out) = g.output_index() else {
        return Err(Error::invalid("train_step", "empty graph"));
    };
    let mut tape = Tape::new();
    let params = g.register(&mut tape, lr != 0.0);
    let xv = tape.leaf(x.clone());
    let vars = g.forward_on_tape(&mut tape, xv, &params)?;
    let loss = tape.mean_abs_error(vars[out], target)?;
    let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::invalid("train_step", format!("loss is {value}")));
    }
    if lr == 0.0 {
        return Ok(value);
    }
    tape.backward(loss)?;
    let step = T::from_f64_lossy(lr);
    for (name, var) in params.iter() {
        let Some(grad) = tape.grad(var) else { continue };
        let w = g.weight_data_mut(name).expect("registered from this graph");
        for (w, &d) in w.iter_mut().zip(grad) {
            *w = *w - step * d;
        }
    }
    Ok(value)
}

/// Mean absolute error of the current network over a dataset.
pub fn dataset_loss(g: &NetworkGraph<f32>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("dataset_loss", "empty dataset"));
    }
    let mut total = 0.0;
    for s in samples {
        check_target(g, &s.input, &s.target)?;
        let y = g.forward(&s.input)?;
        let err: f64 = y
            .data()
            .iter()
            .zip(s.target.data())
            .map(|(&p, &t)| (p as f64 - t as f64).abs())
            .sum();
        total += err / y.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Runs `steps` descent steps cycling through the samples in order and
/// returns the per-step loss.
pub fn train(g: &mut NetworkGraph<f32>, samples: &[Sample], steps: usize, lr: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::invalid("train", format!("learning rate {lr} must be finite and >= 0")));
    }
    for s in samples {
        check_target(g, &s.input, &s.target)?;
    }
    (0..steps)
        .map(|i| {
            let s = &samples[i % samples.len()];
            train_step(g, &s.input, &s.target, lr)
        })
        .collect()
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{:.9}", i + 1, l);
    }
    s
}

/// Loads `NNN_in.rrtn` / `NNN_gt.rrtn` pairs numbered from 000 upwards.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut samples = Vec::new();
    loop {
        let i = samples.len();
        let (inp, gt) = (dir.join(input_file_name(i)), dir.join(target_file_name(i)));
        if !inp.exists() {
            if gt.exists() {
                return Err(Error::Format(format!("{} has no matching input", gt.display())));
            }
            break;
        }
        let input: Tensor<f32> = read_tensor(&inp)?;
        let target: Tensor<f32> = read_tensor(&gt)?;
        let (a, b) = (input.shape(), target.shape());
        if a.n != 1 || a.c != 6 || b != Shape::new(1, 1, a.h, a.w) {
            return Err(Error::InvalidShape {
                op: "load_dataset",
                message: format!("sample {i}: input {a} with target {b}, expected (1,6,h,w) and (1,1,h,w)"),
            });
        }
        samples.push(Sample { input, target });
    }
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no samples (expected 000_in.rrtn)", dir.display())));
    }
    Ok(samples)
}
