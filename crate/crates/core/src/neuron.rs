//! Single-neuron dynamics with reversal-potential nonlinearity.
//!
//! The membrane obeys `dv/dt = -f(t) v + g(t)` with
//! `f = alpha + sum_j beta_j w_j theta(t - t_j)` and `g = sum_j w_j theta(t - t_j)`,
//! where `beta_j = 1/E+` for excitatory and `1/E-` for inhibitory weights.
//! Both coefficients are piecewise constant between input spikes, so the
//! potential has a closed form on every interval.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num;

pub mod oracle;

/// Reserved time for "never fired". Any value at or above half of this is a non-spike.
pub const NO_SPIKE: f64 = 1.0e6;

/// Whether `t` denotes an actual spike.
#[inline]
pub fn fired(t: f64) -> bool {
    t < 0.5 * NO_SPIKE
}

/// Reversal potentials, leak and threshold of a neuron population.
///
/// `e_rev_pos > 0`, `e_rev_neg < 0`; either may be infinite to disable the
/// nonlinearity for that polarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    pub e_rev_pos: f64,
    pub e_rev_neg: f64,
    pub alpha: f64,
    pub v_th: f64,
}

impl NeuronParams {
    pub fn new(e_rev_pos: f64, e_rev_neg: f64, alpha: f64, v_th: f64) -> Result<Self> {
        let p = Self { e_rev_pos, e_rev_neg, alpha, v_th };
        p.validate()?;
        Ok(p)
    }

    /// `E+ = |E|`, `E- = -|E|`, no leak, unit threshold.
    pub fn symmetric(e_abs: f64) -> Result<Self> {
        Self::new(e_abs, -e_abs, 0.0, 1.0)
    }

    /// Linear neuron (both reversal potentials at infinity).
    pub fn ideal() -> Self {
        Self { e_rev_pos: f64::INFINITY, e_rev_neg: f64::NEG_INFINITY, alpha: 0.0, v_th: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_rev_pos > 0.0) {
            return Err(Error::InvalidParams(format!("E+ must be positive, got {}", self.e_rev_pos)));
        }
        if !(self.e_rev_neg < 0.0) {
            return Err(Error::InvalidParams(format!("E- must be negative, got {}", self.e_rev_neg)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParams(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.v_th > 0.0) || !self.v_th.is_finite() {
            return Err(Error::InvalidParams(format!("threshold must be positive, got {}", self.v_th)));
        }
        Ok(())
    }

    pub fn beta_pos(&self) -> f64 {
        1.0 / self.e_rev_pos
    }

    pub fn beta_neg(&self) -> f64 {
        1.0 / self.e_rev_neg
    }

    /// Sign-selected `beta` for a weight. Zero counts as excitatory.
    #[inline]
    pub fn beta_for(&self, w: f64) -> f64 {
        if w >= 0.0 {
            self.beta_pos()
        } else {
            self.beta_neg()
        }
    }
}

// JSON has no infinity, so infinite reversal potentials round-trip as null.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    e_rev_pos: Option<f64>,
    e_rev_neg: Option<f64>,
    alpha: f64,
    v_th: f64,
}

impl Serialize for NeuronParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr {
            e_rev_pos: self.e_rev_pos.is_finite().then_some(self.e_rev_pos),
            e_rev_neg: self.e_rev_neg.is_finite().then_some(self.e_rev_neg),
            alpha: self.alpha,
            v_th: self.v_th,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NeuronParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ParamsRepr::deserialize(d)?;
        NeuronParams::new(
            r.e_rev_pos.unwrap_or(f64::INFINITY),
            r.e_rev_neg.unwrap_or(f64::NEG_INFINITY),
            r.alpha,
            r.v_th,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Input spikes of one sample, indexed by presynaptic neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(times: Vec<f64>) -> Self {
        Self { times }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Spike times in ascending order with the permutation that produced them.
///
/// Non-fired inputs are moved to the end; only the first `fired` entries are spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedSpikes {
    pub times: Vec<f64>,
    pub perm: Vec<usize>,
    pub fired: usize,
}

impl SortedSpikes {
    pub fn fired_times(&self) -> &[f64] {
        &self.times[..self.fired]
    }

    pub fn fired_perm(&self) -> &[usize] {
        &self.perm[..self.fired]
    }
}

/// Stable ascending sort; ties keep input order and sentinels go last.
pub fn sort_spikes(train: &SpikeTrain) -> Result<SortedSpikes> {
    if let Some(i) = train.times.iter().position(|t| t.is_nan()) {
        return Err(Error::InvalidInput(format!("spike time {i} is NaN")));
    }
    let mut perm: Vec<usize> = (0..train.times.len()).collect();
    perm.sort_by(|&a, &b| train.times[a].total_cmp(&train.times[b]));
    let times: Vec<f64> = perm.iter().map(|&j| train.times[j]).collect();
    let fired = times.iter().take_while(|&&t| fired(t)).count();
    Ok(SortedSpikes { times, perm, fired })
}

/// Per-interval coefficients of the exact piecewise solution.
///
/// Interval `k` spans `[t_k, t_{k+1})` over the sorted fired spikes, the last
/// one ending at `end` (1 for the accumulation window, infinity for TTFS).
#[derive(Debug, Clone, PartialEq)]
pub struct Intervals {
    pub starts: Vec<f64>,
    pub widths: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

pub fn exact_intervals(sorted: &SortedSpikes, weights: &[f64], p: &NeuronParams, end: f64) -> Result<Intervals> {
    if weights.len() != sorted.times.len() {
        return Err(Error::Shape(format!("{} weights for {} inputs", weights.len(), sorted.times.len())));
    }
    let n = sorted.fired;
    let mut iv = Intervals {
        starts: Vec::with_capacity(n),
        widths: Vec::with_capacity(n),
        f: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
    };
    let (mut bw, mut gw) = (0.0, 0.0);
    for k in 0..n {
        let w = weights[sorted.perm[k]];
        bw += p.beta_for(w) * w;
        gw += w;
        let start = sorted.times[k];
        let next = if k + 1 < n { sorted.times[k + 1] } else { end };
        iv.starts.push(start);
        iv.widths.push(next - start);
        iv.f.push(p.alpha + bw);
        iv.g.push(gw);
    }
    Ok(iv)
}

fn check_window(sorted: &SortedSpikes) -> Result<()> {
    if let Some(&t) = sorted.fired_times().iter().find(|&&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::InvalidInput(format!("spike time {t} outside the accumulation window [0, 1]")));
    }
    Ok(())
}

/// Exact membrane potential at the end of the accumulation window `t = 1`.
pub fn accumulate_exact(sorted: &SortedSpikes, weights: &[f64], p: &NeuronParams) -> Result<f64> {
    check_window(sorted)?;
    let iv = exact_intervals(sorted, weights, p, 1.0)?;
    num::end_potential(&iv.f, &iv.g, &iv.widths)
}

/// Exact potential at each fired spike's arrival, in sorted order.
pub fn trace_exact(sorted: &SortedSpikes, weights: &[f64], p: &NeuronParams) -> Result<Vec<f64>> {
    let iv = exact_intervals(sorted, weights, p, f64::INFINITY)?;
    let v = num::slot_start_potentials(&iv.f, &iv.g, &iv.widths);
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericOverflow { interval: k });
    }
    Ok(v)
}

/// Exact first threshold crossing, or [`NO_SPIKE`] when the potential never reaches `v_th`.
pub fn fire_ttfs(sorted: &SortedSpikes, weights: &[f64], p: &NeuronParams) -> Result<f64> {
    let iv = exact_intervals(sorted, weights, p, f64::INFINITY)?;
    let v = num::slot_start_potentials(&iv.f, &iv.g, &iv.widths);
    for k in 0..iv.widths.len() {
        if let Some(dt) = num::ttfs_crossing(v[k], iv.f[k], iv.g[k], p.v_th, iv.widths[k]) {
            return Ok(iv.starts[k] + dt);
        }
    }
    Ok(NO_SPIKE)
}

/// Firing-phase spike time from the end-of-accumulation potential.
///
/// The ideal branch (`discharge_beta == 0`) ramps at unit rate: `t = clip(v_th - v)`.
/// Otherwise the discharge follows `dv/dt = a (1 - beta v)` with `a = -ln(1-beta)/beta`,
/// which crosses threshold at `t = [ln(1-beta) - ln(1-beta v)] / ln(1-beta)` (potential
/// measured in units of `v_th`).
pub fn fire_rc(v_final: f64, p: &NeuronParams, discharge_beta: f64) -> Result<f64> {
    if discharge_beta == 0.0 {
        return Ok(clip01(p.v_th - v_final));
    }
    if !(0.0..1.0).contains(&discharge_beta) {
        return Err(Error::InvalidParams(format!("discharge beta must lie in [0, 1), got {discharge_beta}")));
    }
    let u = v_final * (1.0 / p.v_th);
    let y = u * -discharge_beta;
    if !(y > -1.0) {
        return Err(Error::FiringDomain { value: 1.0 + y });
    }
    // Same operation order as the taped firing stage.
    let t = -(y.ln_1p() * (1.0 / (-discharge_beta).ln_1p())) + 1.0;
    Ok(clip01(t))
}

#[inline]
pub fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(times: &[f64]) -> SortedSpikes {
        sort_spikes(&SpikeTrain::new(times.to_vec())).unwrap()
    }

    #[test]
    fn single_spike_closed_form() {
        // E+ = 1: v(1) = 1 - exp(-w (1 - t0)).
        let p = NeuronParams::new(1.0, -1.0, 0.0, 1.0).unwrap();
        let v = accumulate_exact(&sorted(&[0.0]), &[1.0], &p).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((v - 0.6321205588).abs() < 1e-9);
    }

    #[test]
    fn ideal_neuron_is_weighted_sum() {
        let v = accumulate_exact(&sorted(&[0.2, 0.7]), &[0.5, -0.3], &NeuronParams::ideal()).unwrap();
        assert!((v - (0.5 * 0.8 - 0.3 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn empty_and_all_sentinel_inputs() {
        let p = NeuronParams::symmetric(4.0).unwrap();
        assert_eq!(accumulate_exact(&sorted(&[]), &[], &p).unwrap(), 0.0);
        assert_eq!(accumulate_exact(&sorted(&[NO_SPIKE, NO_SPIKE]), &[1.0, 2.0], &p).unwrap(), 0.0);
        assert_eq!(fire_ttfs(&sorted(&[NO_SPIKE]), &[5.0], &p).unwrap(), NO_SPIKE);
    }

    #[test]
    fn trace_values() {
        let p = NeuronParams::new(1.0, -1.0, 0.0, 1.0).unwrap();
        let tr = trace_exact(&sorted(&[0.4]), &[1.0], &p).unwrap();
        assert_eq!(tr, vec![0.0]);
        let tr = trace_exact(&sorted(&[0.0, 0.5]), &[1.0, 0.0], &p).unwrap();
        assert!((tr[1] - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn ttfs_examples() {
        let p = NeuronParams::new(1.0, -1.0, 0.0, 1.0).unwrap();
        // Asymptote w E+ / (w + ...) = 1 exactly at threshold: never fires.
        assert_eq!(fire_ttfs(&sorted(&[0.0]), &[2.0], &p).unwrap(), NO_SPIKE);
        // Linear neuron with w = 2 at t = 0.1 fires half a unit later.
        let t = fire_ttfs(&sorted(&[0.1]), &[2.0], &NeuronParams::ideal()).unwrap();
        assert!((t - 0.6).abs() < 1e-15);
    }

    #[test]
    fn discharge_firing() {
        let p = NeuronParams::ideal();
        assert_eq!(fire_rc(0.3, &p, 0.0).unwrap(), 0.7);
        assert_eq!(fire_rc(1.7, &p, 0.0).unwrap(), 0.0);
        assert_eq!(fire_rc(-0.2, &p, 0.0).unwrap(), 1.0);
        let t = fire_rc(0.5, &p, 0.154344).unwrap();
        assert!((t - 0.5203).abs() < 1e-3, "{t}");
        assert!(matches!(fire_rc(10.0, &p, 0.154344), Err(Error::FiringDomain { .. })));
    }

    #[test]
    fn params_validation_and_json() {
        assert!(NeuronParams::new(0.0, -1.0, 0.0, 1.0).is_err());
        assert!(NeuronParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        let p = NeuronParams::ideal();
        assert_eq!(p.beta_pos(), 0.0);
        assert_eq!(p.beta_neg(), 0.0);
        let s = serde_json::to_string(&p).unwrap();
        let back: NeuronParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let q = NeuronParams::new(2.8, -1.53, 0.0, 1.0).unwrap();
        assert_eq!(serde_json::from_str::<NeuronParams>(&serde_json::to_string(&q).unwrap()).unwrap(), q);
    }

    #[test]
    fn sort_is_stable_with_sentinels_last() {
        let s = sorted(&[0.5, NO_SPIKE, 0.1, 0.5]);
        assert_eq!(s.perm, vec![2, 0, 3, 1]);
        assert_eq!(s.fired, 3);
    }
}
