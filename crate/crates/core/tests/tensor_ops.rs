mod common;

use proptest::prelude::*;
use rrnet_core::ops::{
    concat_channels, conv2d, depthwise_conv2d, elu, pointwise_conv2d, upsample_bilinear_x2, ConvParams, ConvSpec,
    Padding,
};
use rrnet_core::{Shape, Tensor};

fn t(shape: Shape, data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn conv(kernel: Tensor<f64>, spec: ConvSpec) -> ConvParams<f64> {
    ConvParams::new(kernel, None, spec)
}

#[test]
fn valid_box_filter_sums_nine_ones() {
    let x = Tensor::<f64>::ones(Shape::new(1, 1, 3, 3)).unwrap();
    let k = Tensor::<f64>::ones(Shape::new(1, 1, 3, 3)).unwrap();
    let spec = ConvSpec {
        padding: Padding::Valid,
        ..ConvSpec::default()
    };
    let y = conv2d(&x, &conv(k, spec)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
    assert_eq!(y.data(), &[9.0]);
}

#[test]
fn same_padding_shapes() {
    let x = Tensor::<f64>::zeros(Shape::new(1, 3, 8, 8)).unwrap();
    let k = Tensor::<f64>::zeros(Shape::new(4, 3, 3, 3)).unwrap();
    assert_eq!(conv2d(&x, &conv(k.clone(), ConvSpec::default())).unwrap().shape(), Shape::new(1, 4, 8, 8));
    assert_eq!(conv2d(&x, &conv(k, ConvSpec::strided(2))).unwrap().shape(), Shape::new(1, 4, 4, 4));
    let x = Tensor::<f64>::zeros(Shape::new(1, 16, 32, 64)).unwrap();
    let k = Tensor::<f64>::zeros(Shape::new(16, 1, 3, 3)).unwrap();
    let y = depthwise_conv2d(&x, &conv(k, ConvSpec::dilated(6))).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 16, 32, 64));
}

#[test]
fn dilated_impulse_response() {
    let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 5, 5)).unwrap();
    x.set(0, 0, 2, 2, 1.0);
    let k = Tensor::<f64>::ones(Shape::new(1, 1, 3, 3)).unwrap();
    let y = depthwise_conv2d(&x, &conv(k, ConvSpec::dilated(2))).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let expected = if i % 2 == 0 && j % 2 == 0 { 1.0 } else { 0.0 };
            assert_eq!(y.at(0, 0, i, j), expected, "({i},{j})");
        }
    }
}

#[test]
fn identity_tap_is_identity() {
    let mut rng = common::rng(1);
    let x = common::uniform(&mut rng, Shape::new(2, 3, 7, 5), -1.0, 1.0);
    let mut k = Tensor::<f64>::zeros(Shape::new(3, 1, 3, 3)).unwrap();
    for c in 0..3 {
        k.set(c, 0, 1, 1, 1.0);
    }
    assert_eq!(depthwise_conv2d(&x, &conv(k, ConvSpec::default())).unwrap(), x);
}

#[test]
fn pointwise_examples() {
    let x = t(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]);
    let w = t(Shape::new(1, 2, 1, 1), vec![0.5, 0.25]);
    assert_eq!(pointwise_conv2d(&x, &conv(w, ConvSpec::default())).unwrap().data(), &[1.0]);

    let mut rng = common::rng(2);
    let x = common::uniform(&mut rng, Shape::new(1, 4, 3, 3), -1.0, 1.0);
    let mut eye = Tensor::<f64>::zeros(Shape::new(4, 4, 1, 1)).unwrap();
    for c in 0..4 {
        eye.set(c, c, 0, 0, 1.0);
    }
    let p = ConvParams::new(eye, Some(vec![0.0; 4]), ConvSpec::default());
    assert_eq!(pointwise_conv2d(&x, &p).unwrap(), x);

    let x = Tensor::<f32>::zeros(Shape::new(1, 768, 8, 16)).unwrap();
    let w = Tensor::<f32>::zeros(Shape::new(128, 768, 1, 1)).unwrap();
    let y = pointwise_conv2d(&x, &ConvParams::new(w, None, ConvSpec::default())).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 128, 8, 16));
}

#[test]
fn elu_values() {
    let y = elu(&t(Shape::new(1, 1, 1, 3), vec![0.0, 1.0, -1.0]));
    assert_eq!(&y.data()[..2], &[0.0, 1.0]);
    assert!((y.data()[2] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
}

#[test]
fn upsample_examples() {
    let y = upsample_bilinear_x2(&t(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.0, 3.0]));
    assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
    for (j, want) in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].iter().enumerate() {
        assert!((y.at(0, 0, 0, j) - want).abs() < 1e-12);
    }
    let y = upsample_bilinear_x2(&Tensor::<f64>::full(Shape::new(1, 2, 3, 5), 0.7).unwrap());
    assert_eq!(y.shape(), Shape::new(1, 2, 6, 10));
    assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    let y = upsample_bilinear_x2(&t(Shape::new(1, 1, 1, 1), vec![5.0]));
    assert_eq!(y.data(), &[5.0; 4]);
}

#[test]
fn concat_examples() {
    let a = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4)).unwrap();
    let b = Tensor::<f64>::ones(Shape::new(1, 3, 4, 4)).unwrap();
    let y = concat_channels(&[&a, &b]).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 5, 4, 4));
    assert_eq!(y.at(0, 1, 3, 3), 0.0);
    assert_eq!(y.at(0, 2, 0, 0), 1.0);

    let f = Tensor::<f32>::zeros(Shape::new(1, 128, 2, 2)).unwrap();
    let six: Vec<&Tensor<f32>> = std::iter::repeat_n(&f, 6).collect();
    assert_eq!(concat_channels(&six).unwrap().shape().c, 768);
    assert_eq!(concat_channels(&[&a]).unwrap(), a);
    assert!(concat_channels(&[&a, &Tensor::<f64>::zeros(Shape::new(1, 1, 4, 5)).unwrap()]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_padding_is_ceil_division(h in 1usize..20, w in 1usize..20, stride in 1usize..4, dil in 1usize..4, c in 1usize..4) {
        let x = Tensor::<f64>::zeros(Shape::new(1, c, h, w)).unwrap();
        let k = Tensor::<f64>::zeros(Shape::new(c, 1, 3, 3)).unwrap();
        let spec = ConvSpec { stride, dilation: dil, padding: Padding::Same };
        let y = depthwise_conv2d(&x, &conv(k, spec)).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(1, c, h.div_ceil(stride), w.div_ceil(stride)));
    }

    #[test]
    fn valid_padding_shrinks_by_span(h in 1usize..20, w in 1usize..20, stride in 1usize..3, dil in 1usize..3) {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, h, w)).unwrap();
        let k = Tensor::<f64>::zeros(Shape::new(3, 2, 3, 3)).unwrap();
        let spec = ConvSpec { stride, dilation: dil, padding: Padding::Valid };
        let span = 2 * dil + 1;
        match conv2d(&x, &conv(k, spec)) {
            Ok(y) => prop_assert_eq!(y.shape(), Shape::new(1, 3, (h - span) / stride + 1, (w - span) / stride + 1)),
            Err(_) => prop_assert!(h < span || w < span),
        }
    }

    /// A depthwise k x k plus a 1x1 projection holds `k*k*c_in + c_in*c_out`
    /// weights against `k*k*c_in*c_out` for the full convolution, and
    /// computes a convolution whose kernel is the per-channel product.
    #[test]
    fn depthwise_separable_factorization(c_in in 1usize..5, c_out in 1usize..5, seed in 0u64..1000) {
        let mut rng = common::rng(seed);
        let x = common::uniform(&mut rng, Shape::new(1, c_in, 6, 7), -1.0, 1.0);
        let dw = common::uniform(&mut rng, Shape::new(c_in, 1, 3, 3), -1.0, 1.0);
        let pw = common::uniform(&mut rng, Shape::new(c_out, c_in, 1, 1), -1.0, 1.0);
        prop_assert_eq!(dw.len() + pw.len(), 9 * c_in + c_in * c_out);

        let mut full = Tensor::<f64>::zeros(Shape::new(c_out, c_in, 3, 3)).unwrap();
        for o in 0..c_out {
            for i in 0..c_in {
                for a in 0..3 {
                    for b in 0..3 {
                        full.set(o, i, a, b, pw.at(o, i, 0, 0) * dw.at(i, 0, a, b));
                    }
                }
            }
        }
        prop_assert_eq!(full.len(), 9 * c_in * c_out);
        let sep = pointwise_conv2d(&depthwise_conv2d(&x, &conv(dw, ConvSpec::default())).unwrap(), &conv(pw, ConvSpec::default())).unwrap();
        let direct = conv2d(&x, &conv(full, ConvSpec::default())).unwrap();
        for (a, b) in sep.data().iter().zip(direct.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_is_linear_in_the_input(seed in 0u64..1000, stride in 1usize..3, dil in 1usize..3) {
        let mut rng = common::rng(seed);
        let shape = Shape::new(1, 3, 9, 8);
        let (a, b) = (common::uniform(&mut rng, shape, -1.0, 1.0), common::uniform(&mut rng, shape, -1.0, 1.0));
        let k = common::uniform(&mut rng, Shape::new(2, 3, 3, 3), -1.0, 1.0);
        let p = conv(k, ConvSpec { stride, dilation: dil, padding: Padding::Same });
        let sum = Tensor::from_vec(shape, a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect()).unwrap();
        let (ya, yb, ys) = (conv2d(&a, &p).unwrap(), conv2d(&b, &p).unwrap(), conv2d(&sum, &p).unwrap());
        for ((x, y), s) in ya.data().iter().zip(yb.data()).zip(ys.data()) {
            prop_assert!((x + y - s).abs() < 1e-12);
        }
    }

    /// A single active input pixel reaches exactly the taps of the dilated
    /// 3x3 stencil.
    #[test]
    fn impulse_support_matches_stencil(dil in 1usize..6, pi in 0usize..13, pj in 0usize..13) {
        let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 13, 13)).unwrap();
        x.set(0, 0, pi, pj, 1.0);
        let k = Tensor::<f64>::ones(Shape::new(1, 1, 3, 3)).unwrap();
        let y = depthwise_conv2d(&x, &conv(k, ConvSpec::dilated(dil))).unwrap();
        for i in 0..13 {
            for j in 0..13 {
                let di = i as i64 - pi as i64;
                let dj = j as i64 - pj as i64;
                let d = dil as i64;
                let hit = [-d, 0, d].contains(&di) && [-d, 0, d].contains(&dj);
                prop_assert_eq!(y.at(0, 0, i, j), if hit { 1.0 } else { 0.0 });
            }
        }
    }
}
