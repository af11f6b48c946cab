//! Charge-domain circuit model: parameter derivation, a behavioral simulator
//! in physical units, weight-to-current mapping and the deployment pipelines.
//!
//! The simulator works in circuit polarity. The membrane starts at `V_0`,
//! positive weights draw current out through NMOS sources and negative weights
//! push current in through PMOS sources, and a spike is emitted when the
//! potential falls to `V_switch`. Model potential `v` corresponds to
//! `V = V_0 - V_th v`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{encode_iris, RawDataset};
use crate::dstd::OffsetPolicy;
use crate::error::{Error, Result};
use crate::network::{forward_sample, predict, InitScheme, LayerPath, Mode, Model, PathKind};
use crate::neuron::{fired, NeuronParams, SpikeTrain};
use crate::num::exprel;
use crate::training::{evaluate, init_from_config, stream, train, ClassLoss, CostParams, ModelConfig, TrainConfig};

/// Printed value of the discharge reversal potential in the reference design table.
pub const TABLE_E_REV_DIS: f64 = 6.44;
/// Lower and upper bound of the voltage range over which the CLM coefficients were fitted.
pub const FIT_RANGE_V: (f64, f64) = (0.43, 1.36);
/// RMSE reported for the reference circuit under SPICE simulation, kept as context only.
pub const REFERENCE_RMSE_ANN_S: f64 = 39.04e-9;
pub const REFERENCE_RMSE_PNN_S: f64 = 1.97e-9;

const STREAM_CIRCUIT: u64 = 4;
const STREAM_SPLIT: u64 = 5;

/// Physical circuit parameters (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitParams {
    pub v_dd: f64,
    pub c_m: f64,
    pub t_circ: f64,
    pub v_switch: f64,
    pub v_0: f64,
    pub lambda_n: f64,
    pub lambda_p: f64,
    pub lambda_dis: f64,
    /// Fractional standard deviation of the per-synapse CLM coefficient.
    pub lambda_perturbation: f64,
    /// Global multiplier on every synaptic current, standing in for unmodelled parasitics.
    pub current_gain: f64,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            v_dd: 1.8,
            c_m: 140e-15,
            t_circ: 1e-6,
            v_switch: 0.428,
            v_0: 1.3,
            lambda_n: 0.41,
            lambda_p: 0.75,
            lambda_dis: 0.177,
            lambda_perturbation: 0.02,
            current_gain: 1.0,
        }
    }
}

impl CircuitParams {
    /// Swing from rest to the switching point, `V_0 - V_switch`.
    pub fn v_th_circ(&self) -> f64 {
        self.v_0 - self.v_switch
    }

    /// Current that moves the normalized potential by one unit per phase.
    pub fn unit_current(&self) -> f64 {
        self.c_m * self.v_th_circ() / self.t_circ
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_th_circ() > 0.0) {
            return Err(Error::InvalidParams(format!("V_0 ({}) must exceed V_switch ({})", self.v_0, self.v_switch)));
        }
        for (name, v) in [("c_m", self.c_m), ("t_circ", self.t_circ), ("current_gain", self.current_gain)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("lambda_n", self.lambda_n),
            ("lambda_p", self.lambda_p),
            ("lambda_dis", self.lambda_dis),
            ("lambda_perturbation", self.lambda_perturbation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda_dis * self.v_th_circ() >= 1.0 {
            return Err(Error::InvalidParams("lambda_dis * V_th must stay below 1".into()));
        }
        Ok(())
    }
}

/// Model-side parameters implied by a circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub neuron: NeuronParams,
    pub discharge_beta: f64,
    /// `1 / beta_dis`; `None` when the discharger is ideal.
    pub e_rev_dis: Option<f64>,
    /// Normalized discharge rate that makes a resting neuron fire exactly at the phase end.
    pub discharge_rate: f64,
}

/// Reversal potentials and discharge nonlinearity from CLM coefficients.
///
/// A zero coefficient gives an infinite reversal potential (linear branch).
pub fn derive_params(cp: &CircuitParams) -> Result<DerivedParams> {
    cp.validate()?;
    let vth = cp.v_th_circ();
    let e_pos = 1.0 / (vth * cp.lambda_n);
    let e_neg = -1.0 / (vth * cp.lambda_p);
    let beta_dis = cp.lambda_dis * vth;
    Ok(DerivedParams {
        neuron: NeuronParams::new(e_pos, e_neg, 0.0, 1.0)?,
        discharge_beta: beta_dis,
        e_rev_dis: (beta_dis > 0.0).then(|| 1.0 / beta_dis),
        discharge_rate: discharge_rate(beta_dis),
    })
}

/// `-ln(1 - b) / b`, equal to 1 for an ideal discharger.
pub fn discharge_rate(beta: f64) -> f64 {
    if beta == 0.0 {
        1.0
    } else {
        -(-beta).ln_1p() / beta
    }
}

/// Inverse of [`derive_params`]: `(lambda_n, lambda_p, lambda_dis)` for a model.
pub fn lambdas_from_params(p: &NeuronParams, discharge_beta: f64, v_th_circ: f64) -> (f64, f64, f64) {
    (p.beta_pos() / v_th_circ, -p.beta_neg() / v_th_circ, discharge_beta / v_th_circ)
}

/// Global current scaling for positive and negative weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleVector {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
}

impl ScaleVector {
    pub fn unit() -> Self {
        Self { alpha_pos: 1.0, alpha_neg: 1.0 }
    }

    pub fn uniform(a: f64) -> Self {
        Self { alpha_pos: a, alpha_neg: a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Sinks current from the membrane (positive weight).
    Nmos,
    /// Sources current into the membrane (negative weight).
    Pmos,
}

/// Current magnitude of one synapse and the transistor type carrying it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseCurrent {
    pub amps: f64,
    pub polarity: Polarity,
}

/// `I = alpha^sign * C_m V_th / T * |w|`, routed to NMOS for `w >= 0` and PMOS otherwise.
pub fn to_currents(weights: &[f64], cp: &CircuitParams, scale: ScaleVector) -> Vec<SynapseCurrent> {
    let unit = cp.unit_current();
    weights
        .iter()
        .map(|&w| {
            if w >= 0.0 {
                SynapseCurrent { amps: scale.alpha_pos * unit * w, polarity: Polarity::Nmos }
            } else {
                SynapseCurrent { amps: scale.alpha_neg * unit * -w, polarity: Polarity::Pmos }
            }
        })
        .collect()
}

/// One crossbar layer: row-major `fan_out x fan_in` currents with per-synapse CLM coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub currents: Vec<SynapseCurrent>,
    pub lambda: Vec<f64>,
}

/// Mapped network plus the shared discharger.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitNetwork {
    pub layers: Vec<CircuitLayer>,
    pub i_dis: f64,
    pub lambda_dis: f64,
}

/// Multiplicative CLM factors `1 + s N(0, 1)` per synapse (floored at zero).
pub fn draw_lambda_factors<R: Rng + ?Sized>(model: &Model, std: f64, rng: &mut R) -> Vec<Vec<f64>> {
    model
        .layers
        .iter()
        .map(|l| {
            if std > 0.0 {
                let d = Normal::new(1.0, std).expect("std is positive");
                (0..l.weights.len()).map(|_| d.sample(rng).max(0.0)).collect()
            } else {
                vec![1.0; l.weights.len()]
            }
        })
        .collect()
}

/// Maps trained weights onto circuit currents. `factors` perturbs each synapse's CLM coefficient.
pub fn build_circuit(
    model: &Model,
    cp: &CircuitParams,
    scale: ScaleVector,
    factors: Option<&[Vec<f64>]>,
) -> Result<CircuitNetwork> {
    cp.validate()?;
    if model.mode != Mode::RcSpike {
        return Err(Error::InvalidParams("only RC-Spike models map onto the charge-domain circuit".into()));
    }
    if !(scale.alpha_pos > 0.0 && scale.alpha_neg > 0.0) {
        return Err(Error::InvalidParams(format!("scales must be positive, got {scale:?}")));
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, spec) in model.layers.iter().enumerate() {
        let mut currents = to_currents(&spec.weights, cp, scale);
        for c in &mut currents {
            c.amps *= cp.current_gain;
        }
        let lambda = currents
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let base = match c.polarity {
                    Polarity::Nmos => cp.lambda_n,
                    Polarity::Pmos => cp.lambda_p,
                };
                base * factors.map_or(1.0, |f| f[l][k])
            })
            .collect();
        layers.push(CircuitLayer { fan_in: spec.fan_in, fan_out: spec.fan_out, currents, lambda });
    }
    let beta_dis = cp.lambda_dis * cp.v_th_circ();
    Ok(CircuitNetwork { layers, i_dis: discharge_rate(beta_dis) * cp.unit_current(), lambda_dis: cp.lambda_dis })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reset,
    Accumulation,
    Firing,
}

/// Interval on which `C dV/dt = a - b (V - V_0)` holds.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    t0: f64,
    t1: f64,
    v0: f64,
    a: f64,
    b: f64,
    phase: Phase,
}

impl Segment {
    fn voltage(&self, t: f64, cp: &CircuitParams) -> f64 {
        let tau = t - self.t0;
        let x = self.b * tau / cp.c_m;
        cp.v_0 + (self.v0 - cp.v_0) * (-x).exp() + self.a / cp.c_m * tau * exprel(x)
    }

    /// Time after `t0` at which the potential falls to `target`, if it ever does.
    fn crossing(&self, target: f64, cp: &CircuitParams) -> Option<f64> {
        let u0 = self.v0 - cp.v_0;
        let d = target - self.v0;
        if d >= 0.0 {
            return Some(0.0);
        }
        let k = self.b / cp.c_m;
        let r = self.a / cp.c_m - k * u0;
        if r >= 0.0 {
            return None;
        }
        let y = -k * d / r;
        if y <= -1.0 {
            return None;
        }
        let psi = if y.abs() < 1e-12 { 1.0 - 0.5 * y } else { y.ln_1p() / y };
        Some(d / r * psi)
    }
}

/// Event-exact trajectory of one neuron through its reset, accumulation and firing phases.
struct NeuronRun {
    segments: Vec<Segment>,
    spike: f64,
    out_of_range: bool,
}

fn run_neuron(net: &CircuitNetwork, cp: &CircuitParams, layer: usize, neuron: usize, inputs: &[f64]) -> NeuronRun {
    let spec = &net.layers[layer];
    let t = cp.t_circ;
    let acc_start = layer as f64 * t;
    let acc_end = acc_start + t;
    let fire_end = acc_end + t;
    let (lo, hi) = FIT_RANGE_V;
    let mut out_of_range = false;

    let mut events: Vec<(f64, usize)> =
        inputs.iter().enumerate().filter(|(_, &s)| s.is_finite()).map(|(j, &s)| (s, j)).collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut segments =
        vec![Segment { t0: acc_start - t, t1: acc_start, v0: cp.v_0, a: 0.0, b: 0.0, phase: Phase::Reset }];
    let (mut a, mut b, mut v, mut now) = (0.0, 0.0, cp.v_0, acc_start);
    let mut close = |now: &mut f64, v: &mut f64, a: f64, b: f64, until: f64, segs: &mut Vec<Segment>| {
        let seg = Segment { t0: *now, t1: until, v0: *v, a, b, phase: Phase::Accumulation };
        *v = seg.voltage(until, cp);
        if *v < lo || *v > hi {
            out_of_range = true;
        }
        *now = until;
        segs.push(seg);
    };
    for &(s, j) in &events {
        if s > now {
            close(&mut now, &mut v, a, b, s, &mut segments);
        }
        let c = spec.currents[neuron * spec.fan_in + j];
        let lam = spec.lambda[neuron * spec.fan_in + j];
        match c.polarity {
            Polarity::Nmos => a -= c.amps,
            Polarity::Pmos => a += c.amps,
        }
        b += c.amps * lam;
    }
    close(&mut now, &mut v, a, b, acc_end, &mut segments);

    let fire = Segment {
        t0: acc_end,
        t1: fire_end,
        v0: v,
        a: -net.i_dis,
        b: net.i_dis * net.lambda_dis,
        phase: Phase::Firing,
    };
    let spike = match fire.crossing(cp.v_switch, cp) {
        Some(dt) if dt <= t => acc_end + dt,
        // The phase signal ends the window; the output stage emits at the boundary.
        _ => fire_end,
    };
    segments.push(fire);
    NeuronRun { segments, spike, out_of_range }
}

/// Output spike times per layer (absolute seconds) for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitOutput {
    pub spikes: Vec<Vec<f64>>,
    /// Neurons whose potential left the CLM fit range during accumulation.
    pub range_violations: usize,
}

fn check_window(inputs: &[f64], start: f64, end: f64) -> Result<()> {
    for &s in inputs {
        if s.is_finite() && !(s >= start && s <= end) {
            return Err(Error::InvalidInput(format!(
                "input spike at {s:e} s outside the accumulation window [{start:e}, {end:e}]"
            )));
        }
    }
    Ok(())
}

/// Simulates the pipelined network for one sample.
///
/// `inputs` are absolute times in seconds within `[0, T]`; non-finite entries mean no spike.
pub fn simulate_circuit(net: &CircuitNetwork, cp: &CircuitParams, inputs: &[f64]) -> Result<CircuitOutput> {
    let first = net.layers.first().ok_or_else(|| Error::InvalidParams("empty circuit".into()))?;
    if inputs.len() != first.fan_in {
        return Err(Error::Shape(format!("{} inputs for fan-in {}", inputs.len(), first.fan_in)));
    }
    check_window(inputs, 0.0, cp.t_circ)?;
    let mut spikes = Vec::with_capacity(net.layers.len());
    let mut violations = 0;
    let mut current = inputs.to_vec();
    for (l, spec) in net.layers.iter().enumerate() {
        let mut out = Vec::with_capacity(spec.fan_out);
        for i in 0..spec.fan_out {
            let run = run_neuron(net, cp, l, i, &current);
            violations += run.out_of_range as usize;
            out.push(run.spike);
        }
        spikes.push(out.clone());
        current = out;
    }
    Ok(CircuitOutput { spikes, range_violations: violations })
}

/// One sampled point of a membrane trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub layer: usize,
    pub neuron: usize,
    pub time_s: f64,
    pub voltage_v: f64,
    pub phase: Phase,
}

/// Membrane voltages of every neuron sampled `samples_per_phase` times per phase.
pub fn trace_circuit(
    net: &CircuitNetwork,
    cp: &CircuitParams,
    inputs: &[f64],
    samples_per_phase: usize,
) -> Result<(Vec<TracePoint>, CircuitOutput)> {
    let out = simulate_circuit(net, cp, inputs)?;
    let n = samples_per_phase.max(1);
    let mut points = Vec::new();
    let mut current = inputs.to_vec();
    for (l, spec) in net.layers.iter().enumerate() {
        for i in 0..spec.fan_out {
            let run = run_neuron(net, cp, l, i, &current);
            let begin = run.segments[0].t0;
            for k in 0..=3 * n {
                let t = begin + cp.t_circ * k as f64 / n as f64;
                let seg = run
                    .segments
                    .iter()
                    .find(|s| t >= s.t0 && t <= s.t1)
                    .unwrap_or_else(|| run.segments.last().expect("segments"));
                points.push(TracePoint {
                    layer: l,
                    neuron: i,
                    time_s: t,
                    voltage_v: seg.voltage(t, cp),
                    phase: seg.phase,
                });
            }
        }
        current = out.spikes[l].clone();
    }
    Ok((points, out))
}

/// Root-mean-square difference over pairs where both entries are finite.
pub fn firing_rmse(model_times: &[f64], circuit_times: &[f64]) -> Result<f64> {
    if model_times.len() != circuit_times.len() {
        return Err(Error::Shape(format!("{} vs {} firing times", model_times.len(), circuit_times.len())));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (&a, &b) in model_times.iter().zip(circuit_times) {
        if a.is_finite() && b.is_finite() {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no firing pairs, RMSE undefined".into()));
    }
    Ok((sum / n as f64).sqrt())
}

/// Noise-free exact-path output spikes of the model, in seconds after the output firing phase starts.
pub fn model_output_seconds(model: &Model, inputs: &[SpikeTrain], cp: &CircuitParams) -> Result<Vec<Vec<f64>>> {
    let paths = vec![LayerPath::Exact; model.layers.len()];
    inputs
        .iter()
        .map(|x| {
            let outs = forward_sample(model, x, &paths, &[])?;
            Ok(outs
                .last()
                .expect("model has layers")
                .times
                .iter()
                .map(|&t| if fired(t) { t * cp.t_circ } else { f64::INFINITY })
                .collect())
        })
        .collect()
}

/// Circuit output spikes relative to the start of the output firing phase.
pub fn circuit_output_seconds(
    net: &CircuitNetwork,
    cp: &CircuitParams,
    inputs: &[SpikeTrain],
) -> Result<(Vec<Vec<f64>>, usize)> {
    let fire_start = net.layers.len() as f64 * cp.t_circ;
    let mut all = Vec::with_capacity(inputs.len());
    let mut violations = 0;
    for x in inputs {
        let s: Vec<f64> = x.times.iter().map(|&t| if fired(t) { t * cp.t_circ } else { f64::INFINITY }).collect();
        let out = simulate_circuit(net, cp, &s)?;
        violations += out.range_violations;
        all.push(out.spikes.last().expect("layers").iter().map(|&t| t - fire_start).collect());
    }
    Ok((all, violations))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Train an almost ideal model (|E| = 100, linear firing) and deploy it.
    AnnToImc,
    /// Train with the reversal potentials and discharge nonlinearity of the circuit.
    PnnToImc,
}

/// Search window for the current scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleWindow {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ScaleWindow {
    fn default() -> Self {
        Self { lo: 0.5, hi: 1.5, step: 0.01 }
    }
}

impl ScaleWindow {
    /// Grid values, each an integer multiple of `step`.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.lo > 0.0 && self.hi >= self.lo) {
            return Err(Error::InvalidParams(format!("bad scale window {self:?}")));
        }
        let inv = (1.0 / self.step).round();
        if ((1.0 / inv) - self.step).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!("step {} must divide 1", self.step)));
        }
        let k0 = (self.lo * inv).ceil() as i64;
        let k1 = (self.hi * inv + 1e-9).floor() as i64;
        Ok((k0..=k1).map(|k| k as f64 / inv).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleResult {
    pub scale: ScaleVector,
    pub rmse_s: f64,
    pub unit_rmse_s: f64,
    /// True when no grid point beat unit scaling.
    pub flat: bool,
}

fn rmse_at(
    model: &Model,
    cp: &CircuitParams,
    factors: Option<&[Vec<f64>]>,
    inputs: &[SpikeTrain],
    reference: &[f64],
    scale: ScaleVector,
) -> Result<f64> {
    let net = build_circuit(model, cp, scale, factors)?;
    let (circ, _) = circuit_output_seconds(&net, cp, inputs)?;
    let flat: Vec<f64> = circ.into_iter().flatten().collect();
    firing_rmse(reference, &flat)
}

/// Grid search over current scales minimizing output firing-time RMSE.
///
/// `AnnToImc` searches `(alpha_pos, alpha_neg)` jointly; `PnnToImc` ties them.
pub fn scale_search(
    model: &Model,
    cp: &CircuitParams,
    factors: Option<&[Vec<f64>]>,
    inputs: &[SpikeTrain],
    mode: MapMode,
    window: &ScaleWindow,
) -> Result<ScaleResult> {
    let values = window.values()?;
    let reference: Vec<f64> = model_output_seconds(model, inputs, cp)?.into_iter().flatten().collect();
    let candidates: Vec<ScaleVector> = match mode {
        MapMode::AnnToImc => values
            .iter()
            .flat_map(|&p| values.iter().map(move |&n| ScaleVector { alpha_pos: p, alpha_neg: n }))
            .collect(),
        MapMode::PnnToImc => values.iter().map(|&a| ScaleVector::uniform(a)).collect(),
    };
    let scores: Vec<f64> =
        candidates.par_iter().map(|&s| rmse_at(model, cp, factors, inputs, &reference, s)).collect::<Result<_>>()?;
    let unit_rmse = rmse_at(model, cp, factors, inputs, &reference, ScaleVector::unit())?;
    let mut best = 0;
    for (k, &r) in scores.iter().enumerate() {
        if r < scores[best] {
            best = k;
        }
    }
    if scores.is_empty() || !(scores[best] < unit_rmse) {
        log::warn!("no scale in the search window improves on unit scaling; keeping (1, 1)");
        return Ok(ScaleResult { scale: ScaleVector::unit(), rmse_s: unit_rmse, unit_rmse_s: unit_rmse, flat: true });
    }
    Ok(ScaleResult { scale: candidates[best], rmse_s: scores[best], unit_rmse_s: unit_rmse, flat: false })
}

/// Training and deployment settings for the Iris-scale mapping experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub layer_sizes: Vec<usize>,
    /// |E_rev| used for the nearly ideal model.
    pub ann_e_rev: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau_soft: f64,
    pub gamma_time: f64,
    pub t_ref: f64,
    pub gamma_weight: f64,
    pub gamma_early: f64,
    pub sigma_spike: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Latest input spike time of the feature encoding.
    pub tau_in: f64,
    pub window: ScaleWindow,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![5, 5, 5],
            ann_e_rev: 100.0,
            epochs: 300,
            batch_size: 50,
            lr: 1e-2,
            tau_soft: 0.07,
            gamma_time: 0.1,
            t_ref: 0.9,
            gamma_weight: 1e-2,
            gamma_early: 0.2,
            sigma_spike: 0.01,
            n_train: 100,
            n_test: 50,
            tau_in: 0.9,
            window: ScaleWindow::default(),
        }
    }
}

/// Summary of one mapping run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingReport {
    pub mode: MapMode,
    pub seed: u64,
    pub derived: DerivedParams,
    pub table_e_rev_dis: f64,
    pub trained_e_rev_pos: f64,
    pub trained_e_rev_neg: f64,
    pub trained_discharge_beta: f64,
    pub scale: ScaleVector,
    pub search_rmse_s: f64,
    pub unit_rmse_s: f64,
    pub test_rmse_s: f64,
    pub model_test_accuracy: f64,
    pub circuit_test_accuracy: f64,
    pub range_violations: usize,
    pub reference_rmse_s: f64,
}

/// Row of the firing-time difference histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub sample_id: usize,
    pub neuron_id: usize,
    pub model_time_s: f64,
    pub circuit_time_s: f64,
    pub delta_s: f64,
}

#[derive(Debug, Clone)]
pub struct MappingOutcome {
    pub model: Model,
    pub circuit: CircuitNetwork,
    pub report: MappingReport,
    pub histogram: Vec<HistogramRow>,
}

/// Seeded train/test split of the first `n_train + n_test` shuffled rows.
pub fn split_dataset(raw: &RawDataset, n_train: usize, n_test: usize, seed: u64) -> Result<(RawDataset, RawDataset)> {
    if n_train + n_test > raw.len() || n_train == 0 || n_test == 0 {
        return Err(Error::Data(format!("cannot split {} samples into {n_train} train and {n_test} test", raw.len())));
    }
    let mut idx: Vec<usize> = (0..raw.len()).collect();
    idx.shuffle(&mut stream(seed, STREAM_SPLIT));
    Ok((raw.select(&idx[..n_train]), raw.select(&idx[n_train..n_train + n_test])))
}

/// Trains a model for `mode`, maps it onto the circuit, tunes the current scale on the
/// training set and reports test-set firing-time errors.
pub fn run_mapping(
    mode: MapMode,
    raw: &RawDataset,
    cp: &CircuitParams,
    cfg: &MappingConfig,
    seed: u64,
) -> Result<MappingOutcome> {
    let derived = derive_params(cp)?;
    let (train_raw, test_raw) = split_dataset(raw, cfg.n_train, cfg.n_test, seed)?;
    let train_set = encode_iris(&train_raw, cfg.tau_in);
    let test_set = encode_iris(&test_raw, cfg.tau_in);
    if cfg.layer_sizes.first() != Some(&train_set.inputs[0].len()) {
        return Err(Error::Shape(format!(
            "input layer {:?} does not match {} encoded features",
            cfg.layer_sizes.first(),
            train_set.inputs[0].len()
        )));
    }
    if cfg.layer_sizes.last().is_none_or(|&n| n < raw.n_classes) {
        return Err(Error::Shape("output layer smaller than the number of classes".into()));
    }

    let (params, discharge_beta, gamma_weight, gamma_early) = match mode {
        MapMode::AnnToImc => (NeuronParams::symmetric(cfg.ann_e_rev)?, 0.0, 0.0, 0.0),
        MapMode::PnnToImc => (derived.neuron, derived.discharge_beta, cfg.gamma_weight, cfg.gamma_early),
    };
    let finite = |x: f64| x.is_finite().then_some(x);
    let mcfg = ModelConfig {
        layer_sizes: cfg.layer_sizes.clone(),
        mode: Mode::RcSpike,
        e_rev_pos: finite(params.e_rev_pos),
        e_rev_neg: finite(params.e_rev_neg),
        alpha: 0.0,
        v_th: 1.0,
        discharge_beta,
        path: PathKind::Exact,
        m_train: 1,
        m_test: 1,
        train_offset: OffsetPolicy::Centered,
        ttfs_horizon: 6.4,
        sigma_spike: cfg.sigma_spike,
        init: InitScheme::Glorot,
    };
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        cost: CostParams {
            tau_soft: cfg.tau_soft,
            gamma_time: cfg.gamma_time,
            t_ref: cfg.t_ref,
            gamma_q: 0.0,
            gamma_early,
            gamma_weight,
            horizon: 1.0,
            class_loss: ClassLoss::CrossEntropyNegTime,
        },
    };
    let mut model = init_from_config(&mcfg, seed)?;
    train(&mut model, &mcfg, &tcfg, &train_set, None, seed, |_, _| Ok(()))?;
    let noiseless = ModelConfig { sigma_spike: 0.0, ..mcfg.clone() };
    let model_acc = evaluate(&model, &test_set, &noiseless.test_settings(), seed)?;

    let factors = draw_lambda_factors(&model, cp.lambda_perturbation, &mut stream(seed, STREAM_CIRCUIT));
    let search = scale_search(&model, cp, Some(&factors), &train_set.inputs, mode, &cfg.window)?;
    let circuit = build_circuit(&model, cp, search.scale, Some(&factors))?;

    let model_t = model_output_seconds(&model, &test_set.inputs, cp)?;
    let (circ_t, violations) = circuit_output_seconds(&circuit, cp, &test_set.inputs)?;
    if violations > 0 {
        log::warn!("{violations} neuron runs left the fitted range [{}, {}] V", FIT_RANGE_V.0, FIT_RANGE_V.1);
    }
    let mut histogram = Vec::new();
    let mut correct = 0;
    for (s, (m, c)) in model_t.iter().zip(&circ_t).enumerate() {
        let pred = predict(&SpikeTrain::new(c.iter().map(|&t| t / cp.t_circ).collect()));
        correct += (pred == test_set.labels[s]) as usize;
        for (i, (&a, &b)) in m.iter().zip(c).enumerate() {
            histogram.push(HistogramRow {
                sample_id: s,
                neuron_id: i,
                model_time_s: a,
                circuit_time_s: b,
                delta_s: b - a,
            });
        }
    }
    let flat_m: Vec<f64> = model_t.into_iter().flatten().collect();
    let flat_c: Vec<f64> = circ_t.into_iter().flatten().collect();
    let report = MappingReport {
        mode,
        seed,
        derived,
        table_e_rev_dis: TABLE_E_REV_DIS,
        trained_e_rev_pos: params.e_rev_pos,
        trained_e_rev_neg: params.e_rev_neg,
        trained_discharge_beta: discharge_beta,
        scale: search.scale,
        search_rmse_s: search.rmse_s,
        unit_rmse_s: search.unit_rmse_s,
        test_rmse_s: firing_rmse(&flat_m, &flat_c)?,
        model_test_accuracy: model_acc,
        circuit_test_accuracy: correct as f64 / test_set.inputs.len() as f64,
        range_violations: violations,
        reference_rmse_s: match mode {
            MapMode::AnnToImc => REFERENCE_RMSE_ANN_S,
            MapMode::PnnToImc => REFERENCE_RMSE_PNN_S,
        },
    };
    Ok(MappingOutcome { model, circuit, report, histogram })
}

/// Writes histogram rows as CSV with a header.
pub fn write_histogram_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes trace points as CSV with a header.
pub fn write_trace_csv<W: Write>(out: W, points: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerSpec;

    fn single(w: f64, p: NeuronParams, beta: f64) -> Model {
        Model {
            mode: Mode::RcSpike,
            layers: vec![LayerSpec { fan_in: 1, fan_out: 1, weights: vec![w], params: p }],
            discharge_beta: beta,
        }
    }

    #[test]
    fn table_values() {
        let d = derive_params(&CircuitParams::default()).unwrap();
        assert!((d.neuron.e_rev_pos - 2.80).abs() < 0.01);
        assert!((d.neuron.e_rev_neg + 1.53).abs() < 0.01);
        assert!((d.e_rev_dis.unwrap() - 1.0 / (0.872 * 0.177)).abs() < 1e-12);
        let ideal = derive_params(&CircuitParams { lambda_n: 0.0, ..CircuitParams::default() }).unwrap();
        assert_eq!(ideal.neuron.beta_pos(), 0.0);
    }

    #[test]
    fn lambda_roundtrip() {
        let cp = CircuitParams::default();
        let d = derive_params(&cp).unwrap();
        let (n, p, dis) = lambdas_from_params(&d.neuron, d.discharge_beta, cp.v_th_circ());
        assert!(
            (n - cp.lambda_n).abs() < 1e-12 && (p - cp.lambda_p).abs() < 1e-12 && (dis - cp.lambda_dis).abs() < 1e-12
        );
    }

    #[test]
    fn unit_current() {
        let c = to_currents(&[1.0, 0.0, -1.0], &CircuitParams::default(), ScaleVector::unit());
        // 140 fF * 0.872 V / 1 us
        assert!((c[0].amps - 122.08e-9).abs() < 1e-14);
        assert_eq!(c[0].polarity, Polarity::Nmos);
        assert_eq!(c[1].amps, 0.0);
        assert!((c[2].amps - 122.08e-9).abs() < 1e-14);
        assert_eq!(c[2].polarity, Polarity::Pmos);
    }

    #[test]
    fn resting_neuron_fires_at_phase_end() {
        let cp = CircuitParams::default();
        let d = derive_params(&cp).unwrap();
        let m = single(0.7, d.neuron, d.discharge_beta);
        let net = build_circuit(&m, &cp, ScaleVector::unit(), None).unwrap();
        let out = simulate_circuit(&net, &cp, &[f64::INFINITY]).unwrap();
        assert!((out.spikes[0][0] - 2.0 * cp.t_circ).abs() < 1e-15);
        let run = run_neuron(&net, &cp, 0, 0, &[f64::INFINITY]);
        let acc_end = run.segments.iter().rev().find(|s| s.phase == Phase::Accumulation).unwrap();
        assert_eq!(acc_end.voltage(acc_end.t1, &cp), cp.v_0);
    }

    #[test]
    fn single_synapse_matches_model() {
        let cp = CircuitParams::default();
        let d = derive_params(&cp).unwrap();
        for &(w, t_in) in &[(0.8, 0.1), (-0.5, 0.3), (2.5, 0.0), (0.3, 0.9)] {
            let m = single(w, d.neuron, d.discharge_beta);
            let net = build_circuit(&m, &cp, ScaleVector::unit(), None).unwrap();
            let out = simulate_circuit(&net, &cp, &[t_in * cp.t_circ]).unwrap();
            let x = SpikeTrain::new(vec![t_in]);
            let model_t = model_output_seconds(&m, &[x], &cp).unwrap()[0][0];
            assert!((out.spikes[0][0] - cp.t_circ - model_t).abs() < 1e-15, "w={w}");
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(firing_rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = firing_rmse(&[1e-7, 3e-7, f64::INFINITY], &[1.02e-7, 3.02e-7, 5e-7]).unwrap();
        assert!((r - 2e-9).abs() < 1e-20);
        assert!(firing_rmse(&[f64::INFINITY], &[1.0]).is_err());
    }

    #[test]
    fn window_values_are_step_multiples() {
        let v = ScaleWindow::default().values().unwrap();
        assert_eq!(v.len(), 101);
        for x in v {
            assert!(((x * 100.0).round() / 100.0 - x).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_window_input_is_rejected() {
        let cp = CircuitParams::default();
        let m = single(1.0, NeuronParams::symmetric(4.0).unwrap(), 0.0);
        let net = build_circuit(&m, &cp, ScaleVector::unit(), None).unwrap();
        assert!(simulate_circuit(&net, &cp, &[1.5e-6]).is_err());
    }
}
