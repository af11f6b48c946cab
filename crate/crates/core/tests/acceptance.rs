//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p imcsnn --test acceptance`. Pass criterion numbers
//! as arguments (`-- 3 9`) to run a subset. The report never aborts the test
//! run on a failed criterion unless `IMCSNN_ACCEPTANCE_STRICT=1` is set.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use imcsnn::bench::{convergence_sweep, timing_sweep, ConvergenceConfig, SweepAxis, TimedPath, TimingConfig};
use imcsnn::data::{encode_images, load_idx_dir, load_iris_csv};
use imcsnn::dstd::{accumulate_dstd, build_grid, coefficients_fg, discretize, GridMode, OffsetPolicy};
use imcsnn::hardware::{derive_params, run_mapping, CircuitParams, MapMode, MappingConfig};
use imcsnn::network::{forward_pass, init_model, ForwardSettings, InitScheme, Mode, PathKind};
use imcsnn::neuron::oracle::{oracle_rk4_final, oracle_ttfs};
use imcsnn::neuron::{accumulate_exact, fire_ttfs, fired, sort_spikes, trace_exact, NeuronParams, SpikeTrain};
use imcsnn::training::{evaluate, init_from_config, train, ModelConfig, SpikeDataset, TrainConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool").install(f)
}

fn fmt_slopes(xs: &[f64]) -> String {
    xs.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", ")
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn c1_order_in_steps() -> Verdict {
    let cfg = ConvergenceConfig::default();
    let start = Instant::now();
    let slopes: Vec<f64> = single_threaded(|| {
        [2.0, 4.0, 10.0]
            .iter()
            .map(|&e| {
                let r = convergence_sweep(SweepAxis::Steps, &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0], e, &cfg).unwrap();
                r.fit.expect("six points").slope
            })
            .collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let ok = slopes.iter().all(|s| (s + 2.0).abs() <= 0.3) && secs < 300.0;
    verdict(
        ok,
        format!(
            "slopes vs M at |E| = 2, 4, 10: {} (target -2 +/- 0.3); {secs:.0} s on one thread",
            fmt_slopes(&slopes)
        ),
    )
}

fn c2_order_in_e_rev() -> Verdict {
    let cfg = ConvergenceConfig::default();
    let slopes: Vec<f64> = [4.0, 8.0, 16.0]
        .iter()
        .map(|&m| {
            let r = convergence_sweep(SweepAxis::ERev, &[2.0, 4.0, 8.0, 16.0, 32.0, 64.0], m, &cfg).unwrap();
            r.fit.expect("six points").slope
        })
        .collect();
    let ok = slopes.iter().all(|s| (s + 1.0).abs() <= 0.3);
    verdict(ok, format!("slopes vs |E| at M = 4, 8, 16: {} (target -1 +/- 0.3)", fmt_slopes(&slopes)))
}

fn c3_oracles() -> Verdict {
    let mut r = common::rng(303);
    let mut worst_acc: f64 = 0.0;
    for _ in 0..1000 {
        let inst = common::random_instance(&mut r, 1.0, 2.0);
        let exact = accumulate_exact(&sort_spikes(&inst.train).unwrap(), &inst.weights, &inst.params).unwrap();
        let rk4 = oracle_rk4_final(&inst.train, &inst.weights, &inst.params, 1e-5);
        worst_acc = worst_acc.max((exact - rk4).abs());
    }
    let (mut worst_fire, mut fired_n, mut mismatched): (f64, usize, usize) = (0.0, 0, 0);
    for _ in 0..1000 {
        let inst = common::random_instance(&mut r, 2.0, 3.0);
        let exact = fire_ttfs(&sort_spikes(&inst.train).unwrap(), &inst.weights, &inst.params).unwrap();
        match (oracle_ttfs(&inst.train, &inst.weights, &inst.params, 1e-5, 8.0), fired(exact) && exact <= 8.0) {
            (Some(t), true) => {
                worst_fire = worst_fire.max((exact - t).abs());
                fired_n += 1;
            }
            (None, false) => {}
            _ => mismatched += 1,
        }
    }
    let ok = worst_acc < 1e-7 && worst_fire < 1e-6 && mismatched == 0;
    verdict(
        ok,
        format!(
            "max |v_exact - v_rk4| = {worst_acc:.1e} over 1000 instances; max TTFS time gap = {worst_fire:.1e} over {fired_n} firing instances, {mismatched} fire/no-fire disagreements"
        ),
    )
}

fn c4_gradients() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for (mode, name) in [(Mode::RcSpike, "rc"), (Mode::Ttfs, "ttfs")] {
        let (reports, rejected) = common::gradient_survey(mode, 50, 404, 1e-3);
        let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        ok &= worst < 1e-5;
        parts.push(format!("{name}: max rel err {worst:.1e} over 50 models ({rejected} kinked samples redrawn)"));
    }
    verdict(ok, parts.join("; "))
}

fn fashion(n_train: usize, n_test: usize) -> Result<(SpikeDataset, SpikeDataset), String> {
    let dir = data_dir().join("fashion-mnist");
    let load = |prefix: &str, n: usize| {
        load_idx_dir(&dir, prefix)
            .map(|d| encode_images(&d.slice(0, n), 1.0))
            .map_err(|e| format!("{}: {e}", dir.display()))
    };
    Ok((load("train", n_train)?, load("t10k", n_test)?))
}

fn c5_fashion() -> Verdict {
    let (train_set, test_set) = match fashion(10_000, 2_000) {
        Ok(d) => d,
        Err(e) => return verdict(false, format!("dataset unavailable: {e}")),
    };
    let mcfg = ModelConfig::default();
    let tcfg = TrainConfig::default();
    let mut model = init_from_config(&mcfg, 0).unwrap();
    let start = Instant::now();
    let hist = train(&mut model, &mcfg, &tcfg, &train_set, Some(&test_set), 0, |_, _| Ok(())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let acc = hist.last().map_or(0.0, |h| h.test_accuracy);
    let curve: Vec<String> = hist.iter().map(|h| format!("{:.3}", h.test_accuracy)).collect();
    verdict(
        acc >= 0.82 && secs <= 1800.0,
        format!(
            "784-100-10, |E| = 4, M 10/30, {} epochs: final test accuracy {acc:.4} (target >= 0.82) in {secs:.0} s on {} threads; per epoch [{}]",
            hist.len(),
            rayon::current_num_threads(),
            curve.join(" ")
        ),
    )
}

fn c6_random_offset() -> Verdict {
    let (train_set, test_set) = match fashion(10_000, 2_000) {
        Ok(d) => d,
        Err(e) => return verdict(false, format!("dataset unavailable: {e}")),
    };
    let run = |offset: OffsetPolicy, seed: u64| {
        let mcfg = ModelConfig {
            e_rev_pos: Some(1.0),
            e_rev_neg: Some(-1.0),
            m_train: 2,
            train_offset: offset,
            ..ModelConfig::default()
        };
        let tcfg = TrainConfig::default();
        let mut model = init_from_config(&mcfg, seed).unwrap();
        train(&mut model, &mcfg, &tcfg, &train_set, None, seed, |_, _| Ok(())).unwrap();
        evaluate(&model, &test_set, &mcfg.test_settings(), seed).unwrap()
    };
    let seeds = [0u64, 1, 2];
    let random: Vec<f64> = seeds.iter().map(|&s| run(OffsetPolicy::Random, s)).collect();
    let fixed: Vec<f64> = seeds.iter().map(|&s| run(OffsetPolicy::Fixed(0.0), s)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mr, mf) = (mean(&random), mean(&fixed));
    verdict(
        mr >= mf,
        format!("M_train = 2, |E| = 1: random offset {mr:.4} {random:.3?} vs zero offset {mf:.4} {fixed:.3?}"),
    )
}

fn c7_timing() -> Verdict {
    let n_in = [100, 200, 500, 1000, 2000];
    let rc = TimingConfig::default();
    let ttfs = TimingConfig { mode: Mode::Ttfs, ..TimingConfig::default() };
    let (e, d, te, td) = single_threaded(|| {
        (
            timing_sweep(TimedPath::Exact, &n_in, &rc).unwrap(),
            timing_sweep(TimedPath::Dstd(10), &n_in, &rc).unwrap(),
            timing_sweep(TimedPath::Exact, &n_in, &ttfs).unwrap(),
            timing_sweep(TimedPath::Dstd(20), &n_in, &ttfs).unwrap(),
        )
    });
    let slope = |r: &imcsnn::bench::TimingResult| r.fit.map_or(f64::NAN, |f| f.slope);
    let at =
        |r: &imcsnn::bench::TimingResult| r.points.iter().find(|p| p.n_in == 1000).map_or(f64::NAN, |p| p.median_s);
    let (se, sd) = (slope(&e), slope(&d));
    let (speed_rc, speed_ttfs) = (at(&e) / at(&d), at(&te) / at(&td));
    let ok = (se - 2.0).abs() <= 0.3 && (sd - 1.0).abs() <= 0.3 && speed_rc >= 5.0 && speed_ttfs >= 20.0;
    verdict(
        ok,
        format!(
            "exponents: exact rc {se:.2}, DSTD(10) {sd:.2}, exact ttfs {:.2}, DSTD(20) ttfs {:.2}; speedup at N_in = 1000: rc {speed_rc:.1}x (>= 5), ttfs {speed_ttfs:.1}x (>= 20)",
            slope(&te),
            slope(&td)
        ),
    )
}

fn c8_mapping() -> Verdict {
    let raw = match load_iris_csv(&data_dir().join("iris.csv"), true) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("dataset unavailable: {e}")),
    };
    let cfg = MappingConfig::default();
    let perturbed = CircuitParams::default();
    let ideal = CircuitParams { lambda_perturbation: 0.0, ..CircuitParams::default() };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut ann = Vec::new();
    let mut pnn = Vec::new();
    let mut pnn_ideal = Vec::new();
    for seed in 0..5 {
        ann.push(run_mapping(MapMode::AnnToImc, &raw, &perturbed, &cfg, seed).unwrap().report.test_rmse_s);
        pnn.push(run_mapping(MapMode::PnnToImc, &raw, &perturbed, &cfg, seed).unwrap().report.test_rmse_s);
        pnn_ideal.push(run_mapping(MapMode::PnnToImc, &raw, &ideal, &cfg, seed).unwrap().report.test_rmse_s);
    }
    let (ma, mp) = (median(ann), median(pnn));
    let worst_ideal = pnn_ideal.iter().copied().fold(0.0, f64::max);
    let limit = 1e-6 * ideal.t_circ;
    verdict(
        mp <= ma / 10.0 && worst_ideal < limit,
        format!(
            "median test RMSE over 5 seeds with 2% lambda spread: ANN-to-IMC {:.2} ns, PNN-to-IMC {:.3} ns (ratio {:.0}); unperturbed PNN worst {worst_ideal:.1e} s (< {limit:.0e} s)",
            ma * 1e9,
            mp * 1e9,
            ma / mp
        ),
    )
}

fn c9_parameters() -> Verdict {
    let d = derive_params(&CircuitParams::default()).unwrap();
    let (ep, en) = (d.neuron.e_rev_pos, d.neuron.e_rev_neg);
    verdict(
        (ep - 2.80).abs() <= 0.01 && (en + 1.53).abs() <= 0.01,
        format!("E+ = {ep:.4} (2.80 +/- 0.01), E- = {en:.4} (-1.53 +/- 0.01)"),
    )
}

fn prop_check<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(PropConfig { cases: 1000, failure_persistence: None, ..PropConfig::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn c10_invariants() -> Verdict {
    let params = (0.5f64..20.0, 0.5f64..20.0).prop_map(|(a, b)| NeuronParams::new(a, -b, 0.0, 1.0).unwrap());
    let inputs = |w: f64| {
        (1usize..=12).prop_flat_map(move |n| (prop::collection::vec(0.0f64..=1.0, n), prop::collection::vec(-w..w, n)))
    };
    let results = [
        prop_check("bounding", (params.clone(), inputs(30.0)), |(p, (t, w))| {
            let sorted = sort_spikes(&SpikeTrain::new(t)).unwrap();
            let mut vs = trace_exact(&sorted, &w, &p).unwrap();
            vs.push(accumulate_exact(&sorted, &w, &p).unwrap());
            prop_assert!(vs.iter().all(|&v| v <= p.e_rev_pos + 1e-12 && v >= p.e_rev_neg - 1e-12));
            Ok(())
        }),
        prop_check("weighted-sum limit", inputs(3.0), |(t, w)| {
            let expected: f64 = t.iter().zip(&w).map(|(t, w)| w * (1.0 - t)).sum();
            let v = accumulate_exact(&sort_spikes(&SpikeTrain::new(t)).unwrap(), &w, &NeuronParams::ideal()).unwrap();
            prop_assert!((v - expected).abs() < 1e-12 * (1.0 + expected.abs()));
            Ok(())
        }),
        prop_check(
            "mass conservation",
            (prop::collection::vec(0.0f64..=1.0, 1..10), 2usize..64, any::<u64>()),
            |(t, m, seed)| {
                let grid = build_grid(m, GridMode::RcSpike, OffsetPolicy::Random, &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
                let sv = discretize(&SpikeTrain::new(t), &grid);
                for j in 0..sv.n_inputs {
                    let mass: f64 = sv.s[j * sv.n_points..(j + 1) * sv.n_points].iter().sum();
                    prop_assert!((mass - 1.0).abs() < 1e-12);
                }
                Ok(())
            },
        ),
        prop_check(
            "grid exactness",
            (params.clone(), 2usize..40, prop::collection::vec((any::<prop::sample::Index>(), -3.0f64..3.0), 1..10)),
            |(p, m, picks)| {
                let grid = build_grid(m, GridMode::RcSpike, OffsetPolicy::Centered, &mut ChaCha8Rng::seed_from_u64(0))
                    .unwrap();
                let inside: Vec<f64> = grid.points.iter().copied().filter(|t| (0.0..=1.0).contains(t)).collect();
                let train = SpikeTrain::new(picks.iter().map(|(i, _)| *i.get(&inside)).collect());
                let w: Vec<f64> = picks.iter().map(|(_, w)| *w).collect();
                let exact = accumulate_exact(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
                let fg = coefficients_fg(&discretize(&train, &grid), &w, &p, grid.slot_count()).unwrap();
                prop_assert!((accumulate_dstd(&fg, &grid).unwrap() - exact).abs() < 1e-12);
                Ok(())
            },
        ),
        prop_check("determinism", (any::<u64>(), any::<bool>()), |(seed, ttfs)| {
            let mode = if ttfs { Mode::Ttfs } else { Mode::RcSpike };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme =
                if ttfs { InitScheme::Ttfs { w_star: 1.0, t_ref: 3.2, signed: false } } else { InitScheme::Glorot };
            let model =
                init_model(&[6, 5, 3], mode, NeuronParams::symmetric(4.0).unwrap(), 0.0, scheme, &mut rng).unwrap();
            let batch: Vec<SpikeTrain> =
                (0..4).map(|_| SpikeTrain::new((0..6).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect())).collect();
            let s = ForwardSettings {
                path: PathKind::Dstd,
                m: 8,
                offset: OffsetPolicy::Random,
                ttfs_horizon: 6.4,
                sigma: 0.01,
            };
            let a = forward_pass(&batch, &model, &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = forward_pass(&batch, &model, &s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
            Ok(())
        }),
    ];
    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    if failures.is_empty() {
        verdict(true, "bounding, weighted-sum limit, mass conservation, grid exactness, determinism: 1000 cases each")
    } else {
        verdict(false, failures.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "))
    }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 10] = [
    (1, "error order in M", c1_order_in_steps),
    (2, "error order in |E_rev|", c2_order_in_e_rev),
    (3, "closed form vs RK4", c3_oracles),
    (4, "gradient fidelity", c4_gradients),
    (5, "Fashion-MNIST desk accuracy", c5_fashion),
    (6, "random offset benefit", c6_random_offset),
    (7, "complexity and speedup", c7_timing),
    (8, "mapping RMSE ratio", c8_mapping),
    (9, "circuit parameter derivation", c9_parameters),
    (10, "property invariants", c10_invariants),
];

fn main() {
    // Numeric arguments select criteria; libtest flags passed by cargo are ignored.
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("IMCSNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = Vec::new();
    let mut ran = 0;
    for (n, title, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        ran += 1;
        if !v.pass {
            failed.push(n);
        }
        println!(
            "criterion {n:>2} {:<4} {title}: {} [{:.0} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
        std::io::stdout().flush().ok();
    }
    println!(
        "acceptance: {}/{ran} criteria passed{}",
        ran - failed.len(),
        if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
