//! Discretization-error sweeps and single-layer timing benchmarks.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dstd::{accumulate_dstd, build_grid, coefficients_fg, discretize, DstdGrid, GridMode, OffsetPolicy};
use crate::error::{Error, Result};
use crate::network::{layer_cells, layer_forward, tape_layer_forward, LayerPath, LayerSpec, Mode};
use crate::neuron::{accumulate_exact, sort_spikes, NeuronParams, SpikeTrain};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Standard error of the slope (zero for an exact fit or three points on a line).
    pub slope_stderr: f64,
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 paired points, got {} and {}", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidInput("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(SlopeFit { slope, intercept, r2, slope_stderr })
}

/// One row of a sweep: the mean and spread of the per-repeat values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub series: String,
    pub axis_value: f64,
    pub mean: f64,
    pub std: f64,
    pub n_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub series: String,
    pub points: Vec<SweepPoint>,
    pub fit: Option<SlopeFit>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Vary `M` at fixed `|E_rev|`.
    Steps,
    /// Vary `|E_rev|` at fixed `M`.
    ERev,
}

/// Random instance used by the convergence sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub n_inputs: usize,
    pub n_samples: usize,
    pub n_neurons: usize,
    /// Weights are drawn from `N(weight_mean, weight_std^2) / n_inputs`.
    pub weight_mean: f64,
    pub weight_std: f64,
    pub offset: OffsetPolicy,
    pub seeds: Vec<u64>,
    /// Spikes sit exactly on grid points when set (the error must vanish).
    pub pin_to_grid: bool,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n_inputs: 1000,
            n_samples: 1000,
            n_neurons: 10,
            weight_mean: 1.0,
            weight_std: 3.0,
            offset: OffsetPolicy::Centered,
            seeds: vec![0, 1, 2],
            pin_to_grid: false,
        }
    }
}

/// Mean `|v_dstd - v_exact|` over neurons and samples for one seed.
pub fn discretization_error(cfg: &ConvergenceConfig, m: usize, e_abs: f64, seed: u64) -> Result<f64> {
    let p = NeuronParams::symmetric(e_abs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = build_grid(m, GridMode::RcSpike, cfg.offset, &mut rng)?;
    let scale = 1.0 / cfg.n_inputs as f64;
    let wd = Normal::new(cfg.weight_mean * scale, cfg.weight_std * scale)
        .map_err(|e| Error::InvalidParams(format!("weight distribution: {e}")))?;
    let weights: Vec<Vec<f64>> =
        (0..cfg.n_neurons).map(|_| (0..cfg.n_inputs).map(|_| wd.sample(&mut rng)).collect()).collect();
    let samples: Vec<SpikeTrain> = (0..cfg.n_samples)
        .map(|_| SpikeTrain::new((0..cfg.n_inputs).map(|_| sample_time(&grid, cfg.pin_to_grid, &mut rng)).collect()))
        .collect();
    let per_sample: Vec<f64> = samples
        .par_iter()
        .map(|x| {
            let sorted = sort_spikes(x)?;
            let sv = discretize(x, &grid);
            let mut err = 0.0;
            for w in &weights {
                let exact = accumulate_exact(&sorted, w, &p)?;
                let fg = coefficients_fg(&sv, w, &p, grid.slot_count())?;
                err += (accumulate_dstd(&fg, &grid)? - exact).abs();
            }
            Ok(err)
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.iter().sum::<f64>() / (cfg.n_samples * cfg.n_neurons) as f64)
}

fn sample_time<R: Rng>(grid: &DstdGrid, pinned: bool, rng: &mut R) -> f64 {
    if pinned {
        // Interior points only: the first point precedes the window.
        let k = rng.gen_range(1..grid.points.len());
        grid.points[k]
    } else {
        rng.gen::<f64>()
    }
}

/// Error against `M` (`axis = Steps`, `fixed` is `|E|`) or against `|E|` (`fixed` is `M`).
pub fn convergence_sweep(axis: SweepAxis, values: &[f64], fixed: f64, cfg: &ConvergenceConfig) -> Result<SweepResult> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("a sweep needs at least two axis values".into()));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("axis values must be strictly increasing".into()));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidInput("no seeds".into()));
    }
    let series = match axis {
        SweepAxis::Steps => format!("steps_e{fixed}"),
        SweepAxis::ERev => format!("e_rev_m{fixed}"),
    };
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let (m, e) = match axis {
            SweepAxis::Steps => (v as usize, fixed),
            SweepAxis::ERev => (fixed as usize, v),
        };
        let errs: Vec<f64> = cfg.seeds.iter().map(|&s| discretization_error(cfg, m, e, s)).collect::<Result<_>>()?;
        let (mean, std) = mean_std(&errs);
        log::info!("{series} {v}: {mean:.3e}");
        points.push(SweepPoint { series: series.clone(), axis_value: v, mean, std, n_repeats: errs.len() });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.axis_value).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean).collect();
    let fit = if xs.len() >= 3 { fit_slope(&xs, &ys).ok() } else { None };
    Ok(SweepResult { series, points, fit })
}

/// Which layer implementation to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "m")]
pub enum TimedPath {
    Exact,
    Dstd(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub mode: Mode,
    pub n_out: usize,
    pub n_samples: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub e_rev: f64,
    pub ttfs_horizon: f64,
    /// Also time a taped forward plus backward pass.
    pub backward: bool,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            mode: Mode::RcSpike,
            n_out: 100,
            n_samples: 4,
            repeats: 5,
            warmup: 1,
            e_rev: 4.0,
            ttfs_horizon: 6.4,
            backward: false,
            seed: 0,
        }
    }
}

/// Median timing of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub series: String,
    pub n_in: usize,
    pub median_s: f64,
    pub std_s: f64,
    pub n_repeats: usize,
    /// Matrix cells materialized per sample by the layer computation.
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub series: String,
    pub points: Vec<TimingPoint>,
    pub fit: Option<SlopeFit>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timing_layer(n_in: usize, cfg: &TimingConfig, rng: &mut ChaCha8Rng) -> Result<LayerSpec> {
    let p = NeuronParams::symmetric(cfg.e_rev)?;
    // Mildly excitatory weights so TTFS neurons fire partway through the window.
    let scale = match cfg.mode {
        Mode::RcSpike => 1.0 / n_in as f64,
        Mode::Ttfs => 4.0 / n_in as f64,
    };
    let weights = (0..cfg.n_out * n_in).map(|_| (rng.gen::<f64>() - 0.3) * scale).collect();
    Ok(LayerSpec { fan_in: n_in, fan_out: cfg.n_out, weights, params: p })
}

fn run_once(layer: &LayerSpec, inputs: &[SpikeTrain], path: LayerPath, cfg: &TimingConfig) -> Result<()> {
    for x in inputs {
        if cfg.backward {
            let mut tape = Tape::new();
            let t = tape.leaf(x.times.clone(), 1, layer.fan_in);
            let w = tape.leaf(layer.weights.clone(), layer.fan_out, layer.fan_in);
            let out = tape_layer_forward(&mut tape, t, w, layer, cfg.mode, path, 0.0)?;
            let s = tape.sum(out);
            std::hint::black_box(tape.backward(s)?);
        } else {
            std::hint::black_box(layer_forward(x, layer, cfg.mode, path, 0.0)?);
        }
    }
    Ok(())
}

/// Single-threaded wall time of one layer over `n_samples` inputs, for each fan-in.
pub fn timing_sweep(path: TimedPath, n_in_values: &[usize], cfg: &TimingConfig) -> Result<TimingResult> {
    if cfg.repeats < 1 {
        return Err(Error::InvalidParams("repeats must be at least 1".into()));
    }
    let series = match path {
        TimedPath::Exact => format!("{:?}_exact", cfg.mode).to_lowercase(),
        TimedPath::Dstd(m) => format!("{:?}_dstd_m{m}", cfg.mode).to_lowercase(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(n_in_values.len());
    for &n_in in n_in_values {
        let layer = timing_layer(n_in, cfg, &mut rng)?;
        let inputs: Vec<SpikeTrain> =
            (0..cfg.n_samples).map(|_| SpikeTrain::new((0..n_in).map(|_| rng.gen::<f64>()).collect())).collect();
        let grid = match path {
            TimedPath::Exact => None,
            TimedPath::Dstd(m) => {
                let mode = match cfg.mode {
                    Mode::RcSpike => GridMode::RcSpike,
                    Mode::Ttfs => GridMode::Ttfs { horizon: cfg.ttfs_horizon },
                };
                Some(build_grid(m, mode, OffsetPolicy::Centered, &mut rng)?)
            }
        };
        let lp = grid.as_ref().map_or(LayerPath::Exact, LayerPath::Dstd);
        for _ in 0..cfg.warmup {
            run_once(&layer, &inputs, lp, cfg)?;
        }
        let mut times = Vec::with_capacity(cfg.repeats);
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            run_once(&layer, &inputs, lp, cfg)?;
            times.push(start.elapsed().as_secs_f64());
        }
        let (_, std) = mean_std(&times);
        let med = median(&mut times);
        let cells = match &grid {
            None => layer_cells(n_in, cfg.n_out, n_in, n_in),
            Some(g) => layer_cells(n_in, cfg.n_out, g.slot_count(), g.point_count()),
        };
        log::info!("{series} N_in={n_in}: {med:.4e} s");
        points.push(TimingPoint {
            series: series.clone(),
            n_in,
            median_s: med,
            std_s: std,
            n_repeats: cfg.repeats,
            cells,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n_in as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_s).collect();
    let fit = if xs.len() >= 3 { fit_slope(&xs, &ys).ok() } else { None };
    Ok(TimingResult { series, points, fit })
}

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_powers() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        assert!((fit_slope(&xs, &sq).unwrap().slope - 2.0).abs() < 1e-12);
        let inv: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        let f = fit_slope(&xs, &inv).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit_slope(&[1.0, 2.0, 0.0], &[1.0, 1.0, 1.0]).is_err());
        assert!(fit_slope(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn pinned_spikes_have_no_error() {
        let cfg =
            ConvergenceConfig { n_inputs: 50, n_samples: 5, n_neurons: 3, pin_to_grid: true, ..Default::default() };
        for m in [4, 16] {
            for e in [2.0, 4.0, 64.0] {
                assert!(discretization_error(&cfg, m, e, 0).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
