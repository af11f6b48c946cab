#![allow(dead_code)]

use imcsnn::autodiff::GradCheckReport;
use imcsnn::dstd::{build_grid, GridMode, OffsetPolicy};
use imcsnn::network::{forward_sample, LayerPath, Mode};
use imcsnn::neuron::{fired, NeuronParams, SpikeTrain};
use imcsnn::training::{check_sample_gradient, defaults_for, init_from_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random single-neuron problem: spike times in `[0, span]`, signed weights, finite reversal potentials.
pub struct Instance {
    pub train: SpikeTrain,
    pub weights: Vec<f64>,
    pub params: NeuronParams,
}

pub fn random_instance<R: Rng>(r: &mut R, span: f64, weight_scale: f64) -> Instance {
    let n = r.gen_range(1..=8);
    let train = SpikeTrain::new((0..n).map(|_| r.gen::<f64>() * span).collect());
    let weights = (0..n).map(|_| (r.gen::<f64>() * 2.0 - 0.6) * weight_scale).collect();
    let e_pos = r.gen_range(1.0..10.0);
    let e_neg = -r.gen_range(1.0..10.0);
    let alpha = if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..1.0) };
    let params = NeuronParams::new(e_pos, e_neg, alpha, 1.0).unwrap();
    Instance { train, weights, params }
}

/// Gradient checks on fresh random models until `wanted` smooth samples are collected.
///
/// A sample is rejected when its one-sided differences disagree by more than
/// `max_asymmetry`, which only happens when the stencil crosses a kink
/// (slot boundary, clip or sort-order change). Returns accepted reports and
/// the number of rejected samples.
pub fn gradient_survey(mode: Mode, wanted: usize, seed: u64, max_asymmetry: f64) -> (Vec<GradCheckReport>, usize) {
    let (mut mcfg, tcfg) = defaults_for(mode);
    mcfg.layer_sizes = vec![6, 5, 3];
    let grid_mode = match mode {
        Mode::RcSpike => GridMode::RcSpike,
        Mode::Ttfs => GridMode::Ttfs { horizon: mcfg.ttfs_horizon },
    };
    let span = match mode {
        Mode::RcSpike => 1.0,
        Mode::Ttfs => 2.0,
    };
    let mut r = rng(seed);
    let mut accepted = Vec::new();
    let mut rejected = 0;
    let mut attempt = 0u64;
    while accepted.len() < wanted {
        attempt += 1;
        assert!(attempt < 20 * wanted as u64 + 100, "too many kinked samples");
        let model = init_from_config(&mcfg, seed * 10_000 + attempt).unwrap();
        let x = SpikeTrain::new((0..6).map(|_| r.gen::<f64>() * span).collect());
        let label = r.gen_range(0..3);
        let grids: Vec<_> = (0..model.layers.len())
            .map(|_| build_grid(r.gen_range(3..=12), grid_mode, OffsetPolicy::Random, &mut r).unwrap())
            .collect();
        let paths: Vec<LayerPath> = grids.iter().map(LayerPath::Dstd).collect();
        // Saturated or silent outputs have identically zero gradients and prove nothing.
        let informative = |t: f64| match mode {
            Mode::RcSpike => t > 0.0 && t < 1.0,
            Mode::Ttfs => fired(t),
        };
        let outs = forward_sample(&model, &x, &paths, &[]).unwrap();
        if !outs.last().unwrap().times.iter().any(|&t| informative(t)) {
            continue;
        }
        let rep = check_sample_gradient(&model, &x, label, &paths, &tcfg.cost, 1e-4).unwrap();
        if rep.max_asymmetry > max_asymmetry {
            rejected += 1;
        } else {
            accepted.push(rep);
        }
    }
    (accepted, rejected)
}
