//! Supervised training with the softmax-of-spike-times cost and Adam.
//!
//! Each sample is recorded on its own tape. Per-sample gradients are summed
//! in sample order, so results do not depend on the number of worker threads.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckReport, Tape, Var};
use crate::dstd::OffsetPolicy;
use crate::error::{Error, Result};
use crate::network::{
    as_paths, build_layer_grids, draw_noise, forward_pass, init_model, predict, tape_forward, ForwardSettings,
    InitScheme, LayerPath, Mode, Model, PathKind,
};
use crate::neuron::{fired, NeuronParams, SpikeTrain};

/// Form of the classification term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassLoss {
    /// `sum_i kappa_i ln softmax(t / tau)_i`: lowers the label time relative to
    /// the log-sum-exp of all times, which is dominated by the latest output.
    /// Degenerate: one late non-label output suffices, early competitors are
    /// left alone.
    LogSoftmaxTime,
    /// `-sum_i kappa_i ln softmax(-t / tau)_i`: cross-entropy with the earliest
    /// output as the most probable class, so early competitors are pushed back.
    #[default]
    CrossEntropyNegTime,
}

impl ClassLoss {
    /// (scale applied to `t / tau`, sign of the log-probability term).
    fn signs(self) -> (f64, f64) {
        match self {
            ClassLoss::LogSoftmaxTime => (1.0, 1.0),
            ClassLoss::CrossEntropyNegTime => (-1.0, -1.0),
        }
    }
}

/// Cost hyperparameters.
///
/// `C = -sum_i kappa_i ln softmax(-t / tau_soft)_i + gamma_time sum_i (t_i - t_ref)^2
///      + gamma_q Q + gamma_early V + gamma_weight P`,
/// where `Q` sums the weights of inputs that arrive before each neuron fires,
/// `V = sum_l sum_i (t_i^(l) - 1)^2` and `P` is the squared weight norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub tau_soft: f64,
    pub gamma_time: f64,
    pub t_ref: f64,
    pub gamma_q: f64,
    pub gamma_early: f64,
    pub gamma_weight: f64,
    /// Stand-in time for output neurons that never fire.
    pub horizon: f64,
    pub class_loss: ClassLoss,
}

impl Default for CostParams {
    fn default() -> Self {
        Self::rc_default()
    }
}

impl CostParams {
    pub fn rc_default() -> Self {
        Self {
            tau_soft: 0.07,
            gamma_time: 2.6,
            t_ref: 0.9,
            gamma_q: 0.0,
            gamma_early: 0.0,
            gamma_weight: 0.0,
            horizon: 1.0,
            class_loss: ClassLoss::CrossEntropyNegTime,
        }
    }

    pub fn ttfs_default() -> Self {
        Self {
            tau_soft: 0.07,
            gamma_time: 0.02,
            t_ref: 3.2,
            gamma_q: 8e-6,
            gamma_early: 0.0,
            gamma_weight: 0.0,
            horizon: 6.4,
            class_loss: ClassLoss::CrossEntropyNegTime,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_soft > 0.0) {
            return Err(Error::InvalidParams(format!("tau_soft must be positive, got {}", self.tau_soft)));
        }
        for (name, v) in [
            ("gamma_time", self.gamma_time),
            ("gamma_q", self.gamma_q),
            ("gamma_early", self.gamma_early),
            ("gamma_weight", self.gamma_weight),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.horizon.is_finite() {
            return Err(Error::InvalidParams("horizon must be finite".into()));
        }
        Ok(())
    }
}

/// Output times with non-spikes replaced by the horizon.
fn substituted(t: &[f64], horizon: f64) -> Vec<f64> {
    t.iter().map(|&x| if fired(x) { x } else { horizon }).collect()
}

/// Classification loss plus temporal penalty for one output vector.
pub fn sample_cost(output: &SpikeTrain, label: usize, cp: &CostParams) -> f64 {
    let t = substituted(&output.times, cp.horizon);
    let (scale, sign) = cp.class_loss.signs();
    let z: Vec<f64> = t.iter().map(|&x| x * (scale / cp.tau_soft)).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut se = 0.0;
    for &v in &z {
        se += (v - m).exp();
    }
    let loss = ((z[label] - m) - se.ln()) * sign;
    let mut temp = 0.0;
    for &x in &t {
        temp += (x - cp.t_ref) * (x - cp.t_ref);
    }
    loss + cp.gamma_time * temp
}

/// Batch-mean cost from output spikes (`Q`, `V` and `P` need network internals and are omitted).
pub fn cost(outputs: &[SpikeTrain], labels: &[usize], cp: &CostParams) -> Result<f64> {
    if outputs.len() != labels.len() || outputs.is_empty() {
        return Err(Error::Shape(format!("{} outputs for {} labels", outputs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (o, &l) in outputs.iter().zip(labels) {
        if l >= o.len() {
            return Err(Error::InvalidInput(format!("label {l} with {} outputs", o.len())));
        }
        total += sample_cost(o, l, cp);
    }
    Ok(total / outputs.len() as f64)
}

/// Records the per-sample cost (everything except `P`) on `tape`.
pub fn tape_sample_cost(
    tape: &mut Tape,
    model: &Model,
    weights: &[Var],
    input: &SpikeTrain,
    outs: &[Var],
    label: usize,
    cp: &CostParams,
) -> Result<Var> {
    let out = *outs.last().expect("model has layers");
    let vals = tape.value(out).to_vec();
    let n = vals.len();
    if label >= n {
        return Err(Error::InvalidInput(format!("label {label} with {n} outputs")));
    }
    let hz = tape.constant(vec![cp.horizon], 1, 1);
    let cat = tape.concat(&[out, hz]);
    let idx: Vec<usize> = vals.iter().enumerate().map(|(i, &x)| if fired(x) { i } else { n }).collect();
    let t = tape.gather(cat, idx, 1, n)?;

    let (scale, sign) = cp.class_loss.signs();
    let z = tape.mul_scalar(t, scale / cp.tau_soft);
    let m = tape.value(z).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zs = tape.add_scalar(z, -m);
    let ez = tape.exp(zs);
    let se = tape.sum(ez);
    let lse = tape.log(se)?;
    let zl = tape.gather(zs, vec![label], 1, 1)?;
    let lp = tape.sub(zl, lse)?;
    let mut c = tape.mul_scalar(lp, sign);

    if cp.gamma_time > 0.0 {
        let d = tape.add_scalar(t, -cp.t_ref);
        let d2 = tape.mul(d, d)?;
        let s = tape.sum(d2);
        let s = tape.mul_scalar(s, cp.gamma_time);
        c = tape.add(c, s)?;
    }
    if cp.gamma_q > 0.0 {
        let mut prev = input.times.clone();
        for (l, layer) in model.layers.iter().enumerate() {
            let ti = tape.value(outs[l]).to_vec();
            let mut mask = vec![0.0; layer.fan_out * layer.fan_in];
            for i in 0..layer.fan_out {
                for (j, &tj) in prev.iter().enumerate() {
                    // A neuron that never fires has every input arrive first.
                    if fired(tj) && (tj < ti[i] || !fired(ti[i])) {
                        mask[i * layer.fan_in + j] = 1.0;
                    }
                }
            }
            let mk = tape.constant(mask, layer.fan_out, layer.fan_in);
            let wm = tape.mul(weights[l], mk)?;
            let q = tape.sum(wm);
            let q = tape.mul_scalar(q, cp.gamma_q);
            c = tape.add(c, q)?;
            prev = ti;
        }
    }
    if cp.gamma_early > 0.0 {
        for &o in outs {
            let d = tape.add_scalar(o, -1.0);
            let d2 = tape.mul(d, d)?;
            let s = tape.sum(d2);
            let s = tape.mul_scalar(s, cp.gamma_early);
            c = tape.add(c, s)?;
        }
    }
    Ok(c)
}

/// Loss value and weight gradients of one sample.
pub fn sample_gradient(
    model: &Model,
    input: &SpikeTrain,
    label: usize,
    settings_paths: &[crate::network::LayerPath],
    noise: &[Vec<f64>],
    cp: &CostParams,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let weights: Vec<Var> = model.layers.iter().map(|l| tape.leaf(l.weights.clone(), l.fan_out, l.fan_in)).collect();
    let outs = tape_forward(&mut tape, model, &weights, input, settings_paths, noise)?;
    let c = tape_sample_cost(&mut tape, model, &weights, input, &outs, label, cp)?;
    let value = tape.scalar(c);
    if !value.is_finite() {
        return Err(Error::NumericOverflow { interval: 0 });
    }
    let grads = tape.backward(c)?;
    Ok((value, weights.iter().map(|&w| grads.wrt(w).into_owned()).collect()))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (l, p) in params.iter_mut().enumerate() {
            for (k, w) in p.iter_mut().enumerate() {
                let g = grads[l][k];
                let m = &mut self.m[l][k];
                let v = &mut self.v[l][k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / b1t) / ((*v / b2t).sqrt() + self.eps);
            }
        }
    }
}

/// Network architecture and neuron settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    pub mode: Mode,
    /// `null` means infinite (no saturation).
    pub e_rev_pos: Option<f64>,
    pub e_rev_neg: Option<f64>,
    pub alpha: f64,
    pub v_th: f64,
    pub discharge_beta: f64,
    pub path: PathKind,
    pub m_train: usize,
    pub m_test: usize,
    pub train_offset: OffsetPolicy,
    pub ttfs_horizon: f64,
    pub sigma_spike: f64,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![784, 100, 10],
            mode: Mode::RcSpike,
            e_rev_pos: Some(4.0),
            e_rev_neg: Some(-4.0),
            alpha: 0.0,
            v_th: 1.0,
            discharge_beta: 0.0,
            path: PathKind::Dstd,
            m_train: 10,
            m_test: 30,
            train_offset: OffsetPolicy::Random,
            ttfs_horizon: 6.4,
            sigma_spike: 0.01,
            init: InitScheme::Glorot,
        }
    }
}

impl ModelConfig {
    pub fn params(&self) -> Result<NeuronParams> {
        NeuronParams::new(
            self.e_rev_pos.unwrap_or(f64::INFINITY),
            self.e_rev_neg.unwrap_or(f64::NEG_INFINITY),
            self.alpha,
            self.v_th,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if matches!(self.path, PathKind::Dstd) && (self.m_train < 2 || self.m_test < 2) {
            return Err(Error::InvalidGrid("M_train and M_test must be at least 2".into()));
        }
        if self.m_test < self.m_train {
            log::warn!("M_test ({}) below M_train ({})", self.m_test, self.m_train);
        }
        if !(self.sigma_spike >= 0.0) {
            return Err(Error::InvalidParams(format!("sigma_spike must be >= 0, got {}", self.sigma_spike)));
        }
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidParams("need at least input and output sizes".into()));
        }
        Ok(())
    }

    pub fn init_model<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Model> {
        self.validate()?;
        init_model(&self.layer_sizes, self.mode, self.params()?, self.discharge_beta, self.init, rng)
    }

    pub fn train_settings(&self) -> ForwardSettings {
        ForwardSettings {
            path: self.path,
            m: self.m_train,
            offset: self.train_offset,
            ttfs_horizon: self.ttfs_horizon,
            sigma: self.sigma_spike,
        }
    }

    pub fn test_settings(&self) -> ForwardSettings {
        ForwardSettings {
            path: self.path,
            m: self.m_test,
            offset: OffsetPolicy::Centered,
            ttfs_horizon: self.ttfs_horizon,
            sigma: self.sigma_spike,
        }
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub cost: CostParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, lr: 1e-4, cost: CostParams::rc_default() }
    }
}

/// Labelled spike-encoded samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeDataset {
    pub inputs: Vec<SpikeTrain>,
    pub labels: Vec<usize>,
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_seconds: f64,
    #[serde(rename = "M_train")]
    pub m_train: usize,
    #[serde(rename = "M_test")]
    pub m_test: usize,
    pub e_rev: f64,
    pub sigma_spike: f64,
    pub seed: u64,
}

/// Generator for an independent stream derived from `seed`.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(tag);
    r
}

const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Classification accuracy with the test-phase grid.
pub fn evaluate(model: &Model, data: &SpikeDataset, settings: &ForwardSettings, seed: u64) -> Result<f64> {
    if data.inputs.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let mut rng = stream(seed, STREAM_EVAL);
    let outs = forward_pass(&data.inputs, model, settings, &mut rng)?;
    let correct = outs.iter().zip(&data.labels).filter(|(o, &l)| predict(o) == l).count();
    Ok(correct as f64 / data.inputs.len() as f64)
}

/// Compares taped weight gradients of one sample's cost with central differences.
pub fn check_sample_gradient(
    model: &Model,
    input: &SpikeTrain,
    label: usize,
    paths: &[LayerPath],
    cp: &CostParams,
    h: f64,
) -> Result<GradCheckReport> {
    let program = |t: &mut Tape, v: &[Var]| {
        let mut m = model.clone();
        for (layer, &leaf) in m.layers.iter_mut().zip(v) {
            layer.weights = t.value(leaf).to_vec();
        }
        let ws = m
            .layers
            .iter()
            .zip(v)
            .map(|(layer, &leaf)| t.reshape(leaf, layer.fan_out, layer.fan_in))
            .collect::<Result<Vec<_>>>()?;
        let outs = tape_forward(t, &m, &ws, input, paths, &[])?;
        tape_sample_cost(t, &m, &ws, input, &outs, label, cp)
    };
    let inputs: Vec<Vec<f64>> = model.layers.iter().map(|l| l.weights.clone()).collect();
    grad_check(program, &inputs, h)
}

/// One optimizer step on a minibatch; returns the mean cost.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    opt: &mut Adam,
    mcfg: &ModelConfig,
    cp: &CostParams,
    inputs: &[&SpikeTrain],
    labels: &[usize],
    rng: &mut R,
) -> Result<f64> {
    let grids = build_layer_grids(model, &mcfg.train_settings(), rng)?;
    let paths = as_paths(&grids);
    let seeds: Vec<u64> = inputs.iter().map(|_| rng.gen()).collect();
    let sigma = mcfg.sigma_spike;
    let frozen: &Model = model;
    let results: Vec<(f64, Vec<Vec<f64>>)> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .zip(seeds.par_iter())
        .map(|((x, &y), &s)| {
            let noise = draw_noise(frozen, sigma, &mut ChaCha8Rng::seed_from_u64(s));
            sample_gradient(frozen, x, y, &paths, &noise, cp)
        })
        .collect::<Result<_>>()?;
    let b = results.len() as f64;
    let mut grads: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
    let mut loss = 0.0;
    for (c, g) in &results {
        loss += c;
        for (acc, gl) in grads.iter_mut().zip(g) {
            for (a, v) in acc.iter_mut().zip(gl) {
                *a += v;
            }
        }
    }
    let mut penalty = 0.0;
    for (acc, layer) in grads.iter_mut().zip(&model.layers) {
        for (a, &w) in acc.iter_mut().zip(&layer.weights) {
            *a /= b;
            if cp.gamma_weight > 0.0 {
                *a += 2.0 * cp.gamma_weight * w;
                penalty += cp.gamma_weight * w * w;
            }
        }
    }
    let mut params: Vec<&mut Vec<f64>> = model.layers.iter_mut().map(|l| &mut l.weights).collect();
    opt.update(&mut params, &grads);
    Ok(loss / b + penalty)
}

/// Trains `model` in place, calling `on_epoch` after every epoch.
///
/// Accuracy is measured on `test` with the test-phase grid; it is NaN when no test set is given.
pub fn train(
    model: &mut Model,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &SpikeDataset,
    test_set: Option<&SpikeDataset>,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    mcfg.validate()?;
    tcfg.cost.validate()?;
    if tcfg.batch_size == 0 {
        return Err(Error::InvalidParams("batch size must be positive".into()));
    }
    if train_set.inputs.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut rng = stream(seed, STREAM_TRAIN);
    let sizes: Vec<usize> = model.layers.iter().map(|l| l.weights.len()).collect();
    let mut opt = Adam::new(tcfg.lr, &sizes);
    let start = Instant::now();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..train_set.inputs.len()).collect();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let xs: Vec<&SpikeTrain> = chunk.iter().map(|&i| &train_set.inputs[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            total += train_step(model, &mut opt, mcfg, &tcfg.cost, &xs, &ys, &mut rng)?;
            batches += 1;
        }
        let acc = match test_set {
            Some(t) => evaluate(model, t, &mcfg.test_settings(), seed ^ epoch as u64)?,
            None => f64::NAN,
        };
        let rec = EpochRecord {
            epoch,
            train_loss: total / batches as f64,
            test_accuracy: acc,
            wall_seconds: start.elapsed().as_secs_f64(),
            m_train: mcfg.m_train,
            m_test: mcfg.m_test,
            e_rev: mcfg.e_rev_pos.unwrap_or(f64::INFINITY),
            sigma_spike: mcfg.sigma_spike,
            seed,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} accuracy {:.4} ({:.1}s)",
            rec.train_loss,
            rec.test_accuracy,
            rec.wall_seconds
        );
        on_epoch(&rec, model)?;
        history.push(rec);
    }
    Ok(history)
}

/// Fresh model from the config using the initialization stream of `seed`.
pub fn init_from_config(mcfg: &ModelConfig, seed: u64) -> Result<Model> {
    mcfg.init_model(&mut stream(seed, STREAM_INIT))
}

/// Default RC-Spike or TTFS configuration pair.
pub fn defaults_for(mode: Mode) -> (ModelConfig, TrainConfig) {
    match mode {
        Mode::RcSpike => (ModelConfig::default(), TrainConfig::default()),
        Mode::Ttfs => (
            ModelConfig {
                mode: Mode::Ttfs,
                m_train: 20,
                m_test: 60,
                init: InitScheme::Ttfs { w_star: 2.0, t_ref: 3.2, signed: false },
                ..ModelConfig::default()
            },
            TrainConfig { lr: 2e-4, cost: CostParams::ttfs_default(), ..TrainConfig::default() },
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward_sample, LayerPath};

    #[test]
    fn cost_of_uniform_outputs() {
        // Equal times at t_ref: -ln(1/N), or ln(1/N) for the literal form.
        let out = SpikeTrain::new(vec![0.9; 4]);
        let c = cost(std::slice::from_ref(&out), &[2], &CostParams::rc_default()).unwrap();
        assert!((c - 4f64.ln()).abs() < 1e-12);
        let literal = CostParams { class_loss: ClassLoss::LogSoftmaxTime, ..CostParams::rc_default() };
        let c = cost(&[out], &[2], &literal).unwrap();
        assert!((c - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn taped_cost_matches_plain_cost() {
        let mcfg = ModelConfig { layer_sizes: vec![5, 4, 3], ..ModelConfig::default() };
        let model = init_from_config(&mcfg, 3).unwrap();
        let x = SpikeTrain::new(vec![0.1, 0.5, 0.7, 0.2, 0.95]);
        let paths = [LayerPath::Exact, LayerPath::Exact];
        let outs = forward_sample(&model, &x, &paths, &[]).unwrap();
        let cp = CostParams::rc_default();
        let plain = sample_cost(outs.last().unwrap(), 1, &cp);
        let (taped, grads) = sample_gradient(&model, &x, 1, &paths, &[], &cp).unwrap();
        assert!((plain - taped).abs() < 1e-12, "{plain} vs {taped}");
        assert_eq!(grads[0].len(), 20);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = vec![1.0, -1.0];
        let mut opt = Adam::new(0.1, &[2]);
        opt.update(&mut [&mut w], &[vec![3.0, -0.5]]);
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn grid_size_is_checked_only_on_the_discretized_path() {
        let dstd = ModelConfig { m_train: 1, ..ModelConfig::default() };
        assert!(dstd.validate().is_err());
        let exact = ModelConfig { path: PathKind::Exact, m_train: 1, m_test: 1, ..ModelConfig::default() };
        assert!(exact.validate().is_ok());
    }
}
