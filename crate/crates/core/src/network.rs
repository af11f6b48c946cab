//! Fully connected spiking networks.
//!
//! Every layer is evaluated with either the exact event-driven solution or the
//! discretized one. Both share one pipeline: an `inputs x slots` arrival
//! matrix is multiplied by the weight matrix to get per-slot coefficients,
//! then every neuron integrates across its slots. For the exact path the
//! slots are the intervals between sorted input spikes and the arrival
//! matrix is a cumulative one-hot, which costs `O(N_in^2 N_out)`; the
//! discretized path uses the `M + 1` grid slots and costs `O(M N_in N_out)`.
//!
//! The taped forward in [`tape_layer_forward`] reproduces the plain forward
//! bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dstd::{build_grid, discretize, DstdGrid, GridMode, OffsetPolicy};
use crate::error::{Error, Result};
use crate::neuron::{fire_rc, fired, sort_spikes, NeuronParams, SpikeTrain, NO_SPIKE};
use crate::num;

/// Coding scheme of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Accumulate for one unit of time, then fire during a separate phase.
    RcSpike,
    /// Fire at the first threshold crossing.
    Ttfs,
}

/// Which membrane solver a forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Exact,
    Dstd,
}

/// Solver for a single layer evaluation.
#[derive(Debug, Clone, Copy)]
pub enum LayerPath<'a> {
    Exact,
    Dstd(&'a DstdGrid),
}

/// Weights (row-major `fan_out x fan_in`) and neuron parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub params: NeuronParams,
}

impl LayerSpec {
    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.fan_in..(i + 1) * self.fan_in]
    }

    /// `beta` per weight, chosen by weight sign.
    pub fn beta_mask(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| self.params.beta_for(w)).collect()
    }
}

/// A trained or initialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub mode: Mode,
    pub layers: Vec<LayerSpec>,
    /// Non-ideality of the RC-Spike firing phase; 0 is the ideal ramp.
    pub discharge_beta: f64,
}

impl Model {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].fan_in];
        sizes.extend(self.layers.iter().map(|l| l.fan_out));
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidParams("model has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.fan_in * layer.fan_out {
                return Err(Error::Shape(format!(
                    "layer {l}: {} weights for {}x{}",
                    layer.weights.len(),
                    layer.fan_out,
                    layer.fan_in
                )));
            }
            if l > 0 && layer.fan_in != self.layers[l - 1].fan_out {
                return Err(Error::Shape(format!("layer {l} fan-in does not match layer {}", l - 1)));
            }
            layer.params.validate()?;
        }
        if !(0.0..1.0).contains(&self.discharge_beta) {
            return Err(Error::InvalidParams(format!("discharge beta {} outside [0, 1)", self.discharge_beta)));
        }
        Ok(())
    }
}

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    Glorot,
    /// Uniform in `[0, w_max / fan_in]` (or symmetric when `signed`), see [`ttfs_w_max`].
    Ttfs { w_star: f64, t_ref: f64, signed: bool },
}

/// Glorot-uniform bound.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Largest initial TTFS weight sum: `-4 w* L^2 ln(1 - beta) / (beta t_ref^2)`.
///
/// Sized so that a layer whose inputs spread evenly over `[0, t_ref / L]`
/// reaches threshold around `t_ref / L` despite the reversal-potential
/// saturation. `beta = 0` takes the linear limit `4 w* L^2 / t_ref^2`.
pub fn ttfs_w_max(w_star: f64, layers: usize, t_ref: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParams(format!("TTFS init needs 0 <= beta < 1, got {beta}")));
    }
    let l2 = (layers * layers) as f64;
    let sat = if beta == 0.0 { 1.0 } else { -(-beta).ln_1p() / beta };
    Ok(4.0 * w_star * l2 / (t_ref * t_ref) * sat)
}

/// Builds a model with freshly initialized weights.
pub fn init_model<R: Rng + ?Sized>(
    sizes: &[usize],
    mode: Mode,
    params: NeuronParams,
    discharge_beta: f64,
    scheme: InitScheme,
    rng: &mut R,
) -> Result<Model> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidParams(format!("bad layer sizes {sizes:?}")));
    }
    params.validate()?;
    let n_layers = sizes.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let dist = match scheme {
            InitScheme::Glorot => {
                let a = glorot_bound(fan_in, fan_out);
                Uniform::new_inclusive(-a, a)
            }
            InitScheme::Ttfs { w_star, t_ref, signed } => {
                let beta = params.beta_pos().abs().max(params.beta_neg().abs());
                let hi = ttfs_w_max(w_star, n_layers, t_ref, beta)? / fan_in as f64;
                if signed {
                    Uniform::new_inclusive(-hi, hi)
                } else {
                    Uniform::new_inclusive(0.0, hi)
                }
            }
        };
        let weights = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
        layers.push(LayerSpec { fan_in, fan_out, weights, params });
    }
    let model = Model { mode, layers, discharge_beta };
    model.validate()?;
    Ok(model)
}

/// Slot layout and coefficient matrices of one layer for one sample.
struct SlotCoefficients {
    /// `fan_out x K`, row-major.
    f: Vec<f64>,
    g: Vec<f64>,
    widths: Vec<f64>,
    starts: Vec<f64>,
    slots: usize,
}

/// Cumulative one-hot arrival matrix over sorted fired inputs (`fan_in x K`).
fn arrival_matrix(perm: &[usize], fan_in: usize) -> Vec<f64> {
    let k_len = perm.len();
    let mut h = vec![0.0; fan_in * k_len];
    for (rank, &j) in perm.iter().enumerate() {
        for v in &mut h[j * k_len + rank..(j + 1) * k_len] {
            *v = 1.0;
        }
    }
    h
}

/// Grid arrival matrix: running hat sums restricted to the slot columns.
fn grid_arrivals(input: &SpikeTrain, grid: &DstdGrid) -> Vec<f64> {
    let sv = discretize(input, grid);
    let (np, k_len) = (sv.n_points, grid.slot_count());
    if np == k_len {
        return sv.cumulative;
    }
    let mut out = Vec::with_capacity(sv.n_inputs * k_len);
    for j in 0..sv.n_inputs {
        out.extend_from_slice(&sv.cumulative[j * np..j * np + k_len]);
    }
    out
}

fn slot_coefficients(input: &SpikeTrain, layer: &LayerSpec, mode: Mode, path: LayerPath) -> Result<SlotCoefficients> {
    if input.len() != layer.fan_in {
        return Err(Error::Shape(format!("{} input spikes for fan-in {}", input.len(), layer.fan_in)));
    }
    let (arrivals, widths, starts) = match path {
        LayerPath::Exact => {
            let sorted = sort_spikes(input)?;
            let times = sorted.fired_times();
            if mode == Mode::RcSpike {
                if let Some(&t) = times.iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
                    return Err(Error::InvalidInput(format!("spike time {t} outside [0, 1]")));
                }
            }
            let k_len = times.len();
            let mut widths = Vec::with_capacity(k_len);
            for k in 0..k_len {
                widths.push(match (k + 1 < k_len, mode) {
                    (true, _) => times[k + 1] - times[k],
                    (false, Mode::RcSpike) => 1.0 - times[k],
                    (false, Mode::Ttfs) => f64::INFINITY,
                });
            }
            (arrival_matrix(sorted.fired_perm(), layer.fan_in), widths, times.to_vec())
        }
        LayerPath::Dstd(grid) => {
            if grid.is_rc() != (mode == Mode::RcSpike) {
                return Err(Error::InvalidGrid("grid mode does not match network mode".into()));
            }
            (grid_arrivals(input, grid), grid.slot_widths(), grid.slot_starts())
        }
    };
    let k_len = widths.len();
    let wb: Vec<f64> = layer.weights.iter().zip(layer.beta_mask()).map(|(w, b)| w * b).collect();
    let g = num::matmul(&layer.weights, &arrivals, layer.fan_out, layer.fan_in, k_len);
    let mut f = num::matmul(&wb, &arrivals, layer.fan_out, layer.fan_in, k_len);
    for v in f.iter_mut() {
        *v += layer.params.alpha;
    }
    Ok(SlotCoefficients { f, g, widths, starts, slots: k_len })
}

/// Output spike times of one layer for one sample (no noise).
pub fn layer_forward(
    input: &SpikeTrain,
    layer: &LayerSpec,
    mode: Mode,
    path: LayerPath,
    discharge_beta: f64,
) -> Result<SpikeTrain> {
    let c = slot_coefficients(input, layer, mode, path)?;
    let k_len = c.slots;
    let p = &layer.params;
    let mut out = Vec::with_capacity(layer.fan_out);
    for i in 0..layer.fan_out {
        let (f, g) = (&c.f[i * k_len..(i + 1) * k_len], &c.g[i * k_len..(i + 1) * k_len]);
        let t = match mode {
            Mode::RcSpike => {
                let v = num::end_potential(f, g, &c.widths)?;
                fire_rc(v, p, discharge_beta)?
            }
            Mode::Ttfs => {
                let v = num::slot_start_potentials(f, g, &c.widths);
                (0..k_len)
                    .find_map(|k| num::ttfs_crossing(v[k], f[k], g[k], p.v_th, c.widths[k]).map(|dt| c.starts[k] + dt))
                    .unwrap_or(NO_SPIKE)
            }
        };
        out.push(t);
    }
    Ok(SpikeTrain::new(out))
}

/// Adds noise to fired spikes in place.
///
/// RC-Spike times are clipped back into `[0, 1]`; TTFS times are kept non-negative.
pub fn apply_noise(train: &mut SpikeTrain, noise: &[f64], mode: Mode) {
    for (t, &n) in train.times.iter_mut().zip(noise) {
        if fired(*t) {
            let x = *t + n;
            *t = match mode {
                Mode::RcSpike => x.clamp(0.0, 1.0),
                Mode::Ttfs => {
                    if x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                }
            };
        }
    }
}

/// Draws `N(0, sigma^2)` per neuron for every layer.
pub fn draw_noise<R: Rng + ?Sized>(model: &Model, sigma: f64, rng: &mut R) -> Vec<Vec<f64>> {
    model
        .layers
        .iter()
        .map(|l| {
            if sigma > 0.0 {
                let d = Normal::new(0.0, sigma).expect("sigma is positive");
                (0..l.fan_out).map(|_| d.sample(rng)).collect()
            } else {
                vec![0.0; l.fan_out]
            }
        })
        .collect()
}

/// Per-layer outputs of one sample. `noise` may be empty for a noiseless pass.
pub fn forward_sample(
    model: &Model,
    input: &SpikeTrain,
    paths: &[LayerPath],
    noise: &[Vec<f64>],
) -> Result<Vec<SpikeTrain>> {
    let mut outs = Vec::with_capacity(model.layers.len());
    let mut current = input.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut out = layer_forward(&current, layer, model.mode, paths[l], model.discharge_beta)?;
        if let Some(n) = noise.get(l) {
            apply_noise(&mut out, n, model.mode);
        }
        outs.push(out.clone());
        current = out;
    }
    Ok(outs)
}

/// Grid resolution, offset and noise used by a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardSettings {
    pub path: PathKind,
    pub m: usize,
    pub offset: OffsetPolicy,
    pub ttfs_horizon: f64,
    pub sigma: f64,
}

/// One grid per layer (`None` on the exact path). Random offsets are drawn per layer.
pub fn build_layer_grids<R: Rng + ?Sized>(
    model: &Model,
    s: &ForwardSettings,
    rng: &mut R,
) -> Result<Vec<Option<DstdGrid>>> {
    model
        .layers
        .iter()
        .map(|_| match s.path {
            PathKind::Exact => Ok(None),
            PathKind::Dstd => {
                let mode = match model.mode {
                    Mode::RcSpike => GridMode::RcSpike,
                    Mode::Ttfs => GridMode::Ttfs { horizon: s.ttfs_horizon },
                };
                build_grid(s.m, mode, s.offset, rng).map(Some)
            }
        })
        .collect()
}

pub fn as_paths(grids: &[Option<DstdGrid>]) -> Vec<LayerPath<'_>> {
    grids
        .iter()
        .map(|g| match g {
            Some(g) => LayerPath::Dstd(g),
            None => LayerPath::Exact,
        })
        .collect()
}

/// Output-layer spikes for a batch.
///
/// Grids are built once for the batch. Each sample gets its own noise stream
/// seeded from `rng` in batch order, so results do not depend on thread count.
pub fn forward_pass<R: Rng + ?Sized>(
    batch: &[SpikeTrain],
    model: &Model,
    settings: &ForwardSettings,
    rng: &mut R,
) -> Result<Vec<SpikeTrain>> {
    let grids = build_layer_grids(model, settings, rng)?;
    let paths = as_paths(&grids);
    let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
    batch
        .par_iter()
        .zip(seeds)
        .map(|(x, seed)| {
            let noise = draw_noise(model, settings.sigma, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut outs = forward_sample(model, x, &paths, &noise)?;
            Ok(outs.pop().expect("model has layers"))
        })
        .collect()
}

/// Index of the earliest output spike (lowest index on ties).
pub fn predict(output: &SpikeTrain) -> usize {
    let mut best = 0;
    for (i, &t) in output.times.iter().enumerate() {
        if t < output.times[best] {
            best = i;
        }
    }
    best
}

/// Taped layer: `t_in` is `1 x fan_in`, `w` is `fan_out x fan_in`; returns `1 x fan_out`.
///
/// Discrete choices (sort order, hat widths, firing slot, weight signs) are
/// read from forward values and enter as constants.
pub fn tape_layer_forward(
    tape: &mut Tape,
    t_in: Var,
    w: Var,
    layer: &LayerSpec,
    mode: Mode,
    path: LayerPath,
    discharge_beta: f64,
) -> Result<Var> {
    let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
    let p = &layer.params;
    let times = tape.value(t_in).to_vec();
    if times.len() != fan_in {
        return Err(Error::Shape(format!("{} input spikes for fan-in {fan_in}", times.len())));
    }
    // Arrival matrix, slot widths and starts.
    let (arrivals, widths_var, widths_plain, starts_var): (Var, Var, Vec<f64>, Var) = match path {
        LayerPath::Exact => {
            let sorted = sort_spikes(&SpikeTrain::new(times.clone()))?;
            let perm = sorted.fired_perm().to_vec();
            let k_len = perm.len();
            let h = tape.constant(arrival_matrix(&perm, fan_in), fan_in, k_len);
            let starts = tape.gather(t_in, perm.clone(), 1, k_len)?;
            let next = tape.gather(t_in, perm[1.min(k_len)..].to_vec(), 1, k_len.saturating_sub(1))?;
            let ends = if k_len == 0 {
                tape.concat(&[])
            } else {
                let tail = match mode {
                    Mode::RcSpike => tape.constant(vec![1.0], 1, 1),
                    // The open slot gets a zero-width placeholder; its end value is never used.
                    Mode::Ttfs => tape.gather(t_in, vec![perm[k_len - 1]], 1, 1)?,
                };
                tape.concat(&[next, tail])
            };
            let widths = tape.sub(ends, starts)?;
            let mut plain = tape.value(widths).to_vec();
            if let (Some(last), Mode::Ttfs) = (plain.last_mut(), mode) {
                *last = f64::INFINITY;
            }
            (h, widths, plain, starts)
        }
        LayerPath::Dstd(grid) => {
            let np = grid.point_count();
            let k_len = grid.slot_count();
            let idx: Vec<usize> = (0..fan_in).flat_map(|j| std::iter::repeat_n(j, np)).collect();
            let tb = tape.gather(t_in, idx, fan_in, np)?;
            // Spikes outside the grid are pinned to the nearest end point (zero time gradient).
            let (first, last) = (grid.points[0], grid.points[np - 1]);
            let mut keep = Vec::with_capacity(fan_in * np);
            let mut pinned = Vec::with_capacity(fan_in * np);
            let mut pts = Vec::with_capacity(fan_in * np);
            let mut hw = Vec::with_capacity(fan_in * np);
            // Zero-width hats (zero offset terminal point) carry no mass.
            let mut live = Vec::with_capacity(fan_in * np);
            for &t in &times {
                let pin = if !fired(t) {
                    None
                } else if t < first {
                    Some(first)
                } else if !grid.is_rc() && t > last {
                    Some(last)
                } else {
                    None
                };
                let te = pin.unwrap_or(t);
                for m in 0..np {
                    keep.push(if pin.is_some() { 0.0 } else { 1.0 });
                    pinned.push(pin.unwrap_or(0.0));
                    pts.push(grid.points[m]);
                    let w = grid.hat_width(m, te);
                    live.push(if w > 0.0 { 1.0 } else { 0.0 });
                    hw.push(if w > 0.0 { w } else { 1.0 });
                }
            }
            let keep = tape.constant(keep, fan_in, np);
            let pinned = tape.constant(pinned, fan_in, np);
            let tb = tape.mul(tb, keep)?;
            let tb = tape.add(tb, pinned)?;
            let tc = tape.constant(pts, fan_in, np);
            let wc = tape.constant(hw, fan_in, np);
            let d = tape.sub(tc, tb)?;
            let a = tape.abs(d);
            let u = tape.sub(wc, a)?;
            let q = tape.div(u, wc)?;
            let s = tape.relu(q);
            let live = tape.constant(live, fan_in, np);
            let s = tape.mul(s, live)?;
            let cum = tape.cumsum_rows(s);
            let arrivals = if np == k_len {
                cum
            } else {
                let idx: Vec<usize> = (0..fan_in).flat_map(|j| (0..k_len).map(move |k| j * np + k)).collect();
                tape.gather(cum, idx, fan_in, k_len)?
            };
            let plain = grid.slot_widths();
            let finite: Vec<f64> = plain.iter().map(|&x| if x.is_finite() { x } else { 0.0 }).collect();
            let widths = tape.constant(finite, 1, k_len);
            let starts = tape.constant(grid.slot_starts(), 1, k_len);
            (arrivals, widths, plain, starts)
        }
    };
    let k_len = widths_plain.len();

    let mask = tape.constant(layer.beta_mask(), fan_out, fan_in);
    let wb = tape.mul(w, mask)?;
    let g = tape.matmul(w, arrivals)?;
    let fm = tape.matmul(wb, arrivals)?;
    let f = tape.add_scalar(fm, p.alpha);
    let bidx: Vec<usize> = (0..fan_out).flat_map(|_| 0..k_len).collect();
    let wbc = tape.gather(widths_var, bidx, fan_out, k_len)?;
    let x = tape.mul(f, wbc)?;
    let e = tape.exprel(x);
    let gd = tape.mul(g, wbc)?;
    let gde = tape.mul(gd, e)?;

    match mode {
        Mode::RcSpike => {
            let sfx = tape.suffix_excl_rows(x);
            let nsfx = tape.neg(sfx);
            let z = tape.exp(nsfx);
            let term = tape.mul(gde, z)?;
            if let Some(k) = tape.value(term).iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow { interval: k % k_len.max(1) });
            }
            let v = tape.sum_rows(term);
            let v = tape.reshape(v, 1, fan_out)?;
            if discharge_beta == 0.0 {
                let nv = tape.neg(v);
                let t = tape.add_scalar(nv, p.v_th);
                Ok(tape.clip01(t))
            } else {
                let u = tape.mul_scalar(v, 1.0 / p.v_th);
                let y = tape.mul_scalar(u, -discharge_beta);
                if let Some(&bad) = tape.value(y).iter().find(|&&y| !(y > -1.0)) {
                    return Err(Error::FiringDomain { value: 1.0 + bad });
                }
                let l = tape.ln1p(y)?;
                let r = tape.mul_scalar(l, 1.0 / (-discharge_beta).ln_1p());
                let nr = tape.neg(r);
                let t = tape.add_scalar(nr, 1.0);
                Ok(tape.clip01(t))
            }
        }
        Mode::Ttfs => {
            let ex = tape.neg(x);
            let decay = tape.exp(ex);
            let vs = tape.lin_recur(decay, gde)?;
            let (fv, gv, vv) = (tape.value(f), tape.value(g), tape.value(vs));
            // (neuron, flat slot index, slot) of the firing slot, split by immediate crossings.
            let mut regular = Vec::new();
            let mut immediate = Vec::new();
            let mut chosen: Vec<Option<(bool, usize)>> = vec![None; fan_out];
            for i in 0..fan_out {
                for k in 0..k_len {
                    let o = i * k_len + k;
                    if num::ttfs_crossing(vv[o], fv[o], gv[o], p.v_th, widths_plain[k]).is_some() {
                        if vv[o] >= p.v_th {
                            chosen[i] = Some((false, immediate.len()));
                            immediate.push((o, k));
                        } else {
                            chosen[i] = Some((true, regular.len()));
                            regular.push((o, k));
                        }
                        break;
                    }
                }
            }
            let nr = regular.len();
            let ro: Vec<usize> = regular.iter().map(|r| r.0).collect();
            let rk: Vec<usize> = regular.iter().map(|r| r.1).collect();
            let g_sel = tape.gather(g, ro.clone(), 1, nr)?;
            let f_sel = tape.gather(f, ro.clone(), 1, nr)?;
            let v_sel = tape.gather(vs, ro, 1, nr)?;
            let s_sel = tape.gather(starts_var, rk, 1, nr)?;
            let nv = tape.neg(v_sel);
            let d = tape.add_scalar(nv, p.v_th);
            let fth = tape.mul_scalar(f_sel, p.v_th);
            let den = tape.sub(g_sel, fth)?;
            let fd = tape.mul(f_sel, d)?;
            let y = tape.div(fd, den)?;
            let ratio = tape.div(d, den)?;
            let psi = tape.log1p_rel(y);
            let dt = tape.mul(ratio, psi)?;
            let t_reg = tape.add(s_sel, dt)?;
            let ik: Vec<usize> = immediate.iter().map(|r| r.1).collect();
            let t_imm = tape.gather(starts_var, ik, 1, immediate.len())?;
            let sentinel = tape.constant(vec![NO_SPIKE], 1, 1);
            let all = tape.concat(&[t_reg, t_imm, sentinel]);
            let sent_idx = nr + immediate.len();
            let idx: Vec<usize> = chosen
                .iter()
                .map(|w| match w {
                    Some((true, r)) => *r,
                    Some((false, r)) => nr + r,
                    None => sent_idx,
                })
                .collect();
            tape.gather(all, idx, 1, fan_out)
        }
    }
}

/// Adds per-neuron noise on the tape (fired entries only).
pub fn tape_apply_noise(tape: &mut Tape, t: Var, noise: &[f64], mode: Mode) -> Result<Var> {
    let vals = tape.value(t);
    let n: Vec<f64> = vals.iter().zip(noise).map(|(&v, &e)| if fired(v) { e } else { 0.0 }).collect();
    if n.iter().all(|&e| e == 0.0) {
        return Ok(t);
    }
    let nc = tape.constant(n, 1, vals.len());
    let sum = tape.add(t, nc)?;
    Ok(match mode {
        Mode::RcSpike => tape.clip01(sum),
        Mode::Ttfs => tape.relu(sum),
    })
}

/// Taped forward of a whole model; returns the output var of every layer.
pub fn tape_forward(
    tape: &mut Tape,
    model: &Model,
    weights: &[Var],
    input: &SpikeTrain,
    paths: &[LayerPath],
    noise: &[Vec<f64>],
) -> Result<Vec<Var>> {
    let mut current = tape.constant(input.times.clone(), 1, input.len());
    let mut outs = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let mut t = tape_layer_forward(tape, current, weights[l], layer, model.mode, paths[l], model.discharge_beta)?;
        if let Some(n) = noise.get(l) {
            t = tape_apply_noise(tape, t, n, model.mode)?;
        }
        outs.push(t);
        current = t;
    }
    Ok(outs)
}

/// Number of matrix cells a layer forward materializes per sample.
///
/// Counts the arrival matrix, the two coefficient matrices and the per-slot
/// work matrices; `slots` is `K` (fired inputs for the exact path, `M + 1` otherwise).
pub fn layer_cells(fan_in: usize, fan_out: usize, slots: usize, points: usize) -> usize {
    fan_in * points + fan_in * slots + 4 * fan_out * slots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{accumulate_exact, fire_ttfs};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn small_layer(fan_in: usize, fan_out: usize, e: f64, seed: u64) -> LayerSpec {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..fan_in * fan_out).map(|_| r.gen_range(-1.0..1.5)).collect();
        LayerSpec { fan_in, fan_out, weights, params: NeuronParams::symmetric(e).unwrap() }
    }

    #[test]
    fn exact_layer_matches_single_neuron_solver() {
        let layer = small_layer(6, 4, 3.0, 1);
        let input = SpikeTrain::new(vec![0.3, 0.9, NO_SPIKE, 0.05, 0.6, 0.3]);
        let out = layer_forward(&input, &layer, Mode::RcSpike, LayerPath::Exact, 0.0).unwrap();
        let sorted = sort_spikes(&input).unwrap();
        for i in 0..4 {
            let v = accumulate_exact(&sorted, layer.weight_row(i), &layer.params).unwrap();
            assert!((out.times[i] - (1.0 - v).clamp(0.0, 1.0)).abs() < 1e-13);
        }
        let out = layer_forward(&input, &layer, Mode::Ttfs, LayerPath::Exact, 0.0).unwrap();
        for i in 0..4 {
            let t = fire_ttfs(&sorted, layer.weight_row(i), &layer.params).unwrap();
            assert!((out.times[i] - t).abs() < 1e-12 || (out.times[i] == NO_SPIKE && t == NO_SPIKE));
        }
    }

    #[test]
    fn taped_forward_is_bit_identical() {
        let layer = small_layer(7, 5, 2.5, 3);
        let input = SpikeTrain::new(vec![0.31, 0.93, NO_SPIKE, 0.05, 0.62, 0.3, 0.77]);
        let rc = build_grid(6, GridMode::RcSpike, OffsetPolicy::Random, &mut rng()).unwrap();
        let tt = build_grid(9, GridMode::Ttfs { horizon: 3.0 }, OffsetPolicy::Centered, &mut rng()).unwrap();
        let cases = [
            (Mode::RcSpike, LayerPath::Exact, 0.0),
            (Mode::RcSpike, LayerPath::Exact, 0.154344),
            (Mode::RcSpike, LayerPath::Dstd(&rc), 0.0),
            (Mode::RcSpike, LayerPath::Dstd(&rc), 0.2),
            (Mode::Ttfs, LayerPath::Exact, 0.0),
            (Mode::Ttfs, LayerPath::Dstd(&tt), 0.0),
        ];
        for (mode, path, db) in cases {
            let plain = layer_forward(&input, &layer, mode, path, db).unwrap();
            let mut tape = Tape::new();
            let t_in = tape.constant(input.times.clone(), 1, 7);
            let w = tape.leaf(layer.weights.clone(), 5, 7);
            let out = tape_layer_forward(&mut tape, t_in, w, &layer, mode, path, db).unwrap();
            assert_eq!(tape.value(out), plain.times.as_slice(), "{mode:?} {path:?} {db}");
        }
    }

    #[test]
    fn ttfs_init_example() {
        let w = ttfs_w_max(2.0, 2, 3.2, 0.25).unwrap();
        assert!((w - 3.596).abs() < 1e-3, "{w}");
        assert!(ttfs_w_max(2.0, 2, 3.2, 1.0).is_err());
        assert!((glorot_bound(784, 400) - 0.07117).abs() < 1e-4);
    }

    #[test]
    fn predict_takes_earliest() {
        assert_eq!(predict(&SpikeTrain::new(vec![0.5, 0.2, 0.2, 0.9])), 1);
    }

    #[test]
    fn noise_keeps_range() {
        let mut t = SpikeTrain::new(vec![0.0, 1.0, 0.5, NO_SPIKE]);
        apply_noise(&mut t, &[-0.1, 0.1, 0.01, 0.3], Mode::RcSpike);
        assert_eq!(t.times, vec![0.0, 1.0, 0.51, NO_SPIKE]);
    }
}
