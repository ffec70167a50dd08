mod common;

use rrnet_core::blocks::{
    cdc_reduce, decoder_upscale_layer, disparity_head, rr_block_forward, rr_unit_forward, ConvVars, RRBlockConfig,
    RRUnitParams,
};
use rrnet_core::ops::Activation;
use rrnet_core::{Shape, Tape, Tensor, Var};

fn conv_vars(tape: &mut Tape<f64>, rng: &mut rand_chacha::ChaCha8Rng, shape: Shape) -> ConvVars {
    let weight = tape.param(common::uniform(rng, shape, -0.5, 0.5));
    let bias = tape.param(common::uniform(rng, Shape::new(1, shape.n, 1, 1), -0.1, 0.1));
    ConvVars {
        weight,
        bias: Some(bias),
    }
}

fn unit_params(tape: &mut Tape<f64>, rng: &mut rand_chacha::ChaCha8Rng, c_in: usize, cfg: &RRBlockConfig) -> RRUnitParams {
    RRUnitParams {
        reduce: conv_vars(tape, rng, Shape::new(cfg.rr, c_in, 1, 1)),
        dw: conv_vars(tape, rng, Shape::new(cfg.rr, 1, 3, 3)),
        pw: conv_vars(tape, rng, Shape::new(cfg.re, cfg.rr, 1, 1)),
    }
}

fn block(r: usize, rr: usize) -> RRBlockConfig {
    RRBlockConfig {
        r,
        rr,
        re: 2 * rr,
        ..RRBlockConfig::default()
    }
}

#[test]
fn rr_unit_shapes_and_dilations() {
    let cfg = block(4, 16);
    assert_eq!((cfg.dilation(1), cfg.dilation(3)), (6, 18));
    let mut rng = common::rng(0);
    let mut tape = Tape::new();
    let x = tape.leaf(common::uniform(&mut rng, Shape::new(1, 32, 16, 32), -1.0, 1.0));
    let p = unit_params(&mut tape, &mut rng, 32, &cfg);
    let (bottleneck, expanded) = rr_unit_forward(&mut tape, x, &cfg, 1, &p, Activation::Elu).unwrap();
    assert_eq!(tape.value(bottleneck).shape(), Shape::new(1, 16, 16, 32));
    assert_eq!(tape.value(expanded).shape(), Shape::new(1, 32, 16, 32));
    assert!(rr_unit_forward(&mut tape, x, &cfg, 5, &p, Activation::Elu).is_err());
}

#[test]
fn identity_unit_is_activated_projection() {
    let cfg = RRBlockConfig {
        r: 1,
        rr: 3,
        re: 5,
        downsample: false,
        ..RRBlockConfig::default()
    };
    let mut rng = common::rng(1);
    let xs = common::uniform(&mut rng, Shape::new(1, 3, 5, 6), -1.0, 1.0);
    let proj = common::uniform(&mut rng, Shape::new(5, 3, 1, 1), -1.0, 1.0);
    let mut eye = Tensor::<f64>::zeros(Shape::new(3, 3, 1, 1)).unwrap();
    let mut tap = Tensor::<f64>::zeros(Shape::new(3, 1, 3, 3)).unwrap();
    for c in 0..3 {
        eye.set(c, c, 0, 0, 1.0);
        tap.set(c, 0, 1, 1, 1.0);
    }
    let mut tape = Tape::new();
    let x = tape.leaf(xs.clone());
    let pw = tape.leaf(proj.clone());
    let p = RRUnitParams {
        reduce: ConvVars {
            weight: tape.leaf(eye),
            bias: None,
        },
        dw: ConvVars {
            weight: tape.leaf(tap),
            bias: None,
        },
        pw: ConvVars { weight: pw, bias: None },
    };
    let (_, expanded) = rr_unit_forward(&mut tape, x, &cfg, 1, &p, Activation::Elu).unwrap();
    let direct = tape.pointwise_conv2d(x, pw, None, Default::default()).unwrap();
    let direct = tape.elu(direct);
    assert_eq!(tape.value(expanded), tape.value(direct));
}

fn run_block(r: usize, rr: usize, hw: usize) -> (Tape<f64>, Var, rrnet_core::blocks::CdcStack) {
    let cfg = block(r, rr);
    let mut rng = common::rng(r as u64);
    let mut tape = Tape::new();
    let x = tape.leaf(common::uniform(&mut rng, Shape::new(1, 4, hw, hw), -1.0, 1.0));
    let mut units = Vec::new();
    let mut c_in = 4;
    for _ in 0..r {
        units.push(unit_params(&mut tape, &mut rng, c_in, &cfg));
        c_in = cfg.re;
    }
    let (out, stack) = rr_block_forward(&mut tape, x, &cfg, &units, Activation::Elu, rr).unwrap();
    (tape, out, stack)
}

#[test]
fn cdc_stacking_counts() {
    let (tape, _, stack) = run_block(6, 128, 2);
    assert_eq!(stack.stacked_channels(&tape), 768);
    let (tape, _, stack) = run_block(4, 16, 4);
    assert_eq!(stack.stacked_channels(&tape), 64);
    let (tape, out, stack) = run_block(1, 8, 4);
    assert_eq!(stack.features.len(), 1);
    // With one repetition the stage output is that unit's expanded tensor:
    // re channels at half resolution.
    assert_eq!(tape.value(out).shape(), Shape::new(1, 16, 2, 2));
}

#[test]
fn cdc_reduce_shapes() {
    let (mut tape, _, mut stack) = run_block(6, 128, 2);
    let mut rng = common::rng(7);
    let conv = conv_vars(&mut tape, &mut rng, Shape::new(128, 768, 1, 1));
    let y = cdc_reduce(&mut tape, &mut stack, &conv).unwrap();
    assert_eq!(tape.value(y).shape(), Shape::new(1, 128, 2, 2));
    assert_eq!(stack.reduced, Some(y));
}

#[test]
fn single_feature_identity_reduction() {
    let (mut tape, _, mut stack) = run_block(1, 8, 4);
    let mut eye = Tensor::<f64>::zeros(Shape::new(8, 8, 1, 1)).unwrap();
    for c in 0..8 {
        eye.set(c, c, 0, 0, 1.0);
    }
    let conv = ConvVars {
        weight: tape.leaf(eye),
        bias: Some(tape.leaf(Tensor::zeros(Shape::new(1, 8, 1, 1)).unwrap())),
    };
    let y = cdc_reduce(&mut tape, &mut stack, &conv).unwrap();
    assert_eq!(tape.value(y), tape.value(stack.features[0]));
}

#[test]
fn cdc_reduction_is_affine() {
    for seed in 0..20u64 {
        let mut rng = common::rng(seed);
        let shape = Shape::new(1, 8, 3, 5);
        let mut tape = Tape::<f32>::new();
        let w = tape.leaf(common::uniform32(&mut rng, Shape::new(6, 24, 1, 1), -1.0, 1.0));
        let b = tape.leaf(common::uniform32(&mut rng, Shape::new(1, 6, 1, 1), -1.0, 1.0));
        let conv = ConvVars { weight: w, bias: Some(b) };
        let a: Vec<Tensor<f32>> = (0..3).map(|_| common::uniform32(&mut rng, shape, -1.0, 1.0)).collect();
        let bb: Vec<Tensor<f32>> = (0..3).map(|_| common::uniform32(&mut rng, shape, -1.0, 1.0)).collect();
        let mut apply = |feats: Vec<Tensor<f32>>| {
            let features = feats.into_iter().map(|f| tape.leaf(f)).collect();
            let mut stack = rrnet_core::blocks::CdcStack {
                features,
                reduced: None,
                rcn: 6,
            };
            let y = cdc_reduce(&mut tape, &mut stack, &conv).unwrap();
            tape.value(y).clone()
        };
        let sum: Vec<Tensor<f32>> = a
            .iter()
            .zip(&bb)
            .map(|(x, y)| Tensor::from_vec(shape, x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect()).unwrap())
            .collect();
        let zero = vec![Tensor::<f32>::zeros(shape).unwrap(); 3];
        let (fa, fb, f0, fs) = (apply(a), apply(bb), apply(zero), apply(sum));
        for i in 0..fa.len() {
            let lhs = fa.data()[i] + fb.data()[i] - f0.data()[i];
            assert!((lhs - fs.data()[i]).abs() <= 1e-5, "seed {seed}: {lhs} vs {}", fs.data()[i]);
        }
    }
}

#[test]
fn decoder_layer_shapes() {
    let mut rng = common::rng(3);
    let mut tape = Tape::new();
    let prev = tape.leaf(Tensor::zeros(Shape::new(1, 64, 8, 16)).unwrap());
    let skip = tape.leaf(Tensor::zeros(Shape::new(1, 128, 16, 32)).unwrap());
    let conv = conv_vars(&mut tape, &mut rng, Shape::new(64, 192, 3, 3));
    let y = decoder_upscale_layer(&mut tape, prev, Some(skip), &conv, Activation::Elu).unwrap();
    assert_eq!(tape.value(y).shape(), Shape::new(1, 64, 16, 32));
    let conv = conv_vars(&mut tape, &mut rng, Shape::new(64, 64, 3, 3));
    let y = decoder_upscale_layer(&mut tape, prev, None, &conv, Activation::Elu).unwrap();
    assert_eq!(tape.value(y).shape(), Shape::new(1, 64, 16, 32));
    let bad = tape.leaf(Tensor::zeros(Shape::new(1, 128, 8, 8)).unwrap());
    assert!(decoder_upscale_layer(&mut tape, prev, Some(bad), &conv, Activation::Elu).is_err());
}

#[test]
fn disparity_head_range() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(common::uniform(&mut common::rng(4), Shape::new(2, 5, 4, 6), -1.0, 1.0));
    let zero = ConvVars {
        weight: tape.leaf(Tensor::zeros(Shape::new(1, 5, 3, 3)).unwrap()),
        bias: Some(tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 1)).unwrap())),
    };
    let y = disparity_head(&mut tape, x, &zero).unwrap();
    assert_eq!(tape.value(y).shape(), Shape::new(2, 1, 4, 6));
    assert!(tape.value(y).data().iter().all(|&v| v == 0.15));

    let big = ConvVars {
        weight: tape.leaf(common::uniform(&mut common::rng(5), Shape::new(1, 5, 3, 3), -3.0, 3.0)),
        bias: None,
    };
    let y = disparity_head(&mut tape, x, &big).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 0.3));
}

#[test]
fn cdc_skip_reaches_every_repetition() {
    let cfg = block(4, 6);
    let mut rng = common::rng(12);
    let mut tape = Tape::new();
    let x = tape.leaf(common::uniform(&mut rng, Shape::new(1, 4, 16, 16), -1.0, 1.0));
    let mut units = Vec::new();
    let mut c_in = 4;
    for _ in 0..cfg.r {
        units.push(unit_params(&mut tape, &mut rng, c_in, &cfg));
        c_in = cfg.re;
    }
    let (_, mut stack) = rr_block_forward(&mut tape, x, &cfg, &units, Activation::Elu, 6).unwrap();
    let reduce = conv_vars(&mut tape, &mut rng, Shape::new(6, 24, 1, 1));
    let skip = cdc_reduce(&mut tape, &mut stack, &reduce).unwrap();
    let prev = tape.leaf(common::uniform(&mut rng, Shape::new(1, 5, 8, 8), -1.0, 1.0));
    let conv = conv_vars(&mut tape, &mut rng, Shape::new(3, 11, 3, 3));
    let y = decoder_upscale_layer(&mut tape, prev, Some(skip), &conv, Activation::Elu).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();

    let nonzero = |v: Option<Var>| tape.grad(v.unwrap()).is_some_and(|g| g.iter().any(|&x| x != 0.0));
    for (j, u) in units.iter().enumerate() {
        assert!(nonzero(Some(u.reduce.weight)) && nonzero(u.reduce.bias), "repetition {}", j + 1);
        // Expansions feed the CDC stack through the next repetition's
        // bottleneck; the last one only feeds the stage output.
        let expected = j + 1 < cfg.r;
        for part in [&u.dw, &u.pw] {
            assert_eq!(nonzero(Some(part.weight)), expected, "repetition {}", j + 1);
        }
    }
    assert!(nonzero(Some(reduce.weight)) && nonzero(Some(conv.weight)));
}
