mod common;

use rrnet_core::graph::{random_graph, GraphBuilder, NodeInput};
use rrnet_core::ops::{ConvKind, ConvSpec};
use rrnet_core::profiler::{
    brute_force_count, profile, profile_preset_sweep, profile_with, ProfileOptions, REFERENCE_INPUT,
};
use rand::Rng;
use rrnet_core::{build, preset, ConnectionMode, GraphSpec, Shape};

const PARAMS: [f64; 4] = [0.71e6, 0.84e6, 0.97e6, 1.11e6];
const MADDS: [f64; 4] = [2.80e9, 2.95e9, 3.11e9, 3.26e9];

#[test]
fn presets_within_tolerance() {
    for (i, r) in (1..=4).enumerate() {
        let g = build::<f32>(&preset(&format!("rrnet-r{r}")).unwrap()).unwrap();
        let rep = profile(&g, REFERENCE_INPUT).unwrap();
        let dp = rep.params as f64 / PARAMS[i] - 1.0;
        let dm = rep.madds as f64 / MADDS[i] - 1.0;
        assert!(dp.abs() <= 0.15 && dm.abs() <= 0.15, "r{r}: params {} ({dp:+.3}), madds {} ({dm:+.3})", rep.params, rep.madds);
    }
}

#[test]
fn cost_is_affine_and_increasing_in_r() {
    let base = preset("rrnet-r4").unwrap();
    let specs: Vec<_> = (1..=6).map(|r| base.with_repetitions(r)).collect();
    let table = profile_preset_sweep(&specs, REFERENCE_INPUT).unwrap();
    assert!(table.is_affine(), "{}", table.render());
    let inc = table.increments();
    assert!(inc.iter().all(|&d| d == inc[0] && d > 0), "{inc:?}");
    assert!(table.rows.windows(2).all(|w| w[1].madds > w[0].madds));
}

#[test]
fn analytic_profile_matches_brute_force() {
    let mut rng = common::rng(2024);
    for i in 0..150 {
        let rg = random_graph::<f32, _>(&mut rng, 10, 64).unwrap();
        let rep = profile(&rg.graph, rg.input).unwrap();
        let (params, madds) = brute_force_count(&rg.graph, rg.input).unwrap();
        assert_eq!((rep.params, rep.madds), (params, madds), "graph {i}");
        assert!(rg.graph.nodes().len() <= 10);
    }
}

#[test]
fn pointwise_params_equal_weight_length() {
    let mut b = GraphBuilder::new(5);
    b.conv("p", ConvKind::Pointwise, NodeInput::Image, 7, 1, ConvSpec::default(), false)
        .unwrap();
    let g = b.finish::<f32>(0, 1).unwrap();
    let rep = profile(&g, Shape::new(1, 5, 3, 3)).unwrap();
    assert_eq!(rep.params, g.weights()["p"].len() as u64);
}

#[test]
fn bias_accounting() {
    let mut with = preset("rrnet-r2").unwrap();
    with.bias = true;
    let without = rrnet_core::GraphSpec { bias: false, ..with.clone() };
    let a = build::<f32>(&with).unwrap();
    let b = build::<f32>(&without).unwrap();
    let (pa, pb) = (profile(&a, REFERENCE_INPUT).unwrap(), profile(&b, REFERENCE_INPUT).unwrap());
    let c_out: u64 = a
        .nodes()
        .iter()
        .filter_map(|n| n.op.kernel_shape().map(|_| n.out_channels as u64))
        .sum();
    assert_eq!(pa.params - pb.params, c_out);
    assert_eq!(pa.madds, pb.madds);
    let no_bias = profile_with(&a, REFERENCE_INPUT, ProfileOptions { count_bias: false, images: 1 }).unwrap();
    assert_eq!(no_bias.params, pb.params);
}

#[test]
fn skip_mode_saves_exactly_the_reduction_layers() {
    let spec = preset("rrnet-r4").unwrap();
    let cdc = build::<f32>(&spec).unwrap();
    let skip = build::<f32>(&spec.with_connection(ConnectionMode::Skip)).unwrap();
    let reductions: u64 = cdc
        .weights()
        .iter()
        .filter(|(n, _)| n.starts_with("cdc"))
        .map(|(_, t)| t.len() as u64)
        .sum();
    let delta = profile(&cdc, REFERENCE_INPUT).unwrap().params as i64 - profile(&skip, REFERENCE_INPUT).unwrap().params as i64;
    // Decoder layers also narrow when rcn differs from rr; the presets keep
    // rcn = rr so the only difference is the reduction layers.
    assert_eq!(delta, reductions as i64);
}

#[test]
fn widening_never_lowers_cost() {
    let mut rng = common::rng(31);
    let input = Shape::new(1, 6, 64, 128);
    let cost = |spec: &GraphSpec| {
        let rep = profile(&build::<f32>(spec).unwrap(), input).unwrap();
        (rep.params, rep.madds)
    };
    let mut spec = preset("rrnet-r1").unwrap();
    for trial in 0..40 {
        let before = cost(&spec);
        let mut wider = spec.clone();
        let i = rng.gen_range(0..5);
        let by = rng.gen_range(1..=8);
        match rng.gen_range(0..4) {
            0 => wider.stages[i].rr += by,
            1 => wider.stages[i].re += by,
            2 => wider.rcn_per_stage[i] += by,
            _ => wider.decoder_widths[i] += by,
        }
        if wider.validate().is_err() {
            continue;
        }
        let after = cost(&wider);
        assert!(after.0 > before.0 && after.1 >= before.1, "trial {trial}: {before:?} -> {after:?}");
        spec = wider;
    }
}
