//! Reference integrators that do not share any closed-form code with the
//! exact or discretized paths.
//!
//! Integration restarts at every input spike so that the right-hand side is
//! smooth inside each RK4 step.

use super::{fired, NeuronParams, SpikeTrain};

/// Sampled membrane potential.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

struct Events {
    /// (time, weight) of fired inputs, ascending by time.
    spikes: Vec<(f64, f64)>,
}

impl Events {
    fn new(train: &SpikeTrain, weights: &[f64]) -> Self {
        assert_eq!(train.len(), weights.len(), "one weight per input");
        let mut spikes: Vec<(f64, f64)> =
            train.times.iter().zip(weights).filter(|(t, _)| fired(**t)).map(|(&t, &w)| (t, w)).collect();
        spikes.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { spikes }
    }

    /// Coefficients after all spikes with time `<= t` have arrived.
    fn coeffs_after(&self, arrived: usize, p: &NeuronParams) -> (f64, f64) {
        let mut f = p.alpha;
        let mut g = 0.0;
        for &(_, w) in &self.spikes[..arrived] {
            f += p.beta_for(w) * w;
            g += w;
        }
        (f, g)
    }
}

#[inline]
fn rk4_step(v: f64, h: f64, f: f64, g: f64) -> f64 {
    let rhs = |x: f64| -f * x + g;
    let k1 = rhs(v);
    let k2 = rhs(v + 0.5 * h * k1);
    let k3 = rhs(v + 0.5 * h * k2);
    let k4 = rhs(v + h * k3);
    v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Walks the segments between consecutive spikes, calling `visit(t0, t1, f, g)`.
fn segments(ev: &Events, p: &NeuronParams, t_end: f64, mut visit: impl FnMut(f64, f64, f64, f64) -> bool) {
    let mut t = 0.0;
    let mut arrived = 0;
    loop {
        while arrived < ev.spikes.len() && ev.spikes[arrived].0 <= t {
            arrived += 1;
        }
        let next = if arrived < ev.spikes.len() { ev.spikes[arrived].0.min(t_end) } else { t_end };
        let (f, g) = ev.coeffs_after(arrived, p);
        if next > t && !visit(t, next, f, g) {
            return;
        }
        if next >= t_end {
            return;
        }
        t = next;
    }
}

/// Fixed-step RK4 over `[0, 1]` with steps of at most `dt`.
pub fn oracle_rk4(train: &SpikeTrain, weights: &[f64], p: &NeuronParams, dt: f64) -> Trace {
    let ev = Events::new(train, weights);
    let mut tr = Trace { t: vec![0.0], v: vec![0.0] };
    let mut v = 0.0;
    segments(&ev, p, 1.0, |t0, t1, f, g| {
        let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
        let h = (t1 - t0) / n as f64;
        for i in 0..n {
            v = rk4_step(v, h, f, g);
            tr.t.push(t0 + (i + 1) as f64 * h);
            tr.v.push(v);
        }
        true
    });
    tr
}

/// End-of-window potential from [`oracle_rk4`] without storing the trace.
pub fn oracle_rk4_final(train: &SpikeTrain, weights: &[f64], p: &NeuronParams, dt: f64) -> f64 {
    let ev = Events::new(train, weights);
    let mut v = 0.0;
    segments(&ev, p, 1.0, |t0, t1, f, g| {
        let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
        let h = (t1 - t0) / n as f64;
        for _ in 0..n {
            v = rk4_step(v, h, f, g);
        }
        true
    });
    v
}

/// First threshold crossing by RK4 plus bisection inside the crossing step.
///
/// Returns `None` when the potential stays below `p.v_th` up to `t_max`.
pub fn oracle_ttfs(train: &SpikeTrain, weights: &[f64], p: &NeuronParams, dt: f64, t_max: f64) -> Option<f64> {
    let ev = Events::new(train, weights);
    let mut v = 0.0;
    let mut hit = None;
    segments(&ev, p, t_max, |t0, t1, f, g| {
        let n = ((t1 - t0) / dt).ceil().max(1.0) as usize;
        let h = (t1 - t0) / n as f64;
        for i in 0..n {
            let start = t0 + i as f64 * h;
            let next = rk4_step(v, h, f, g);
            if next >= p.v_th {
                let (mut lo, mut hi) = (0.0, h);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if rk4_step(v, mid, f, g) >= p.v_th {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hit = Some(start + hi);
                return false;
            }
            v = next;
        }
        true
    });
    hit
}

/// Firing-phase oracle: integrates `dv/dt = a (1 - beta v)` from `v0` until `v = 1`.
///
/// Returns the crossing time clipped to `[0, 1]`.
pub fn oracle_discharge(v0: f64, beta: f64, dt: f64) -> f64 {
    if v0 >= 1.0 {
        return 0.0;
    }
    let a = if beta == 0.0 { 1.0 } else { -(-beta).ln_1p() / beta };
    let rhs = |x: f64| a * (1.0 - beta * x);
    let step = |x: f64, h: f64| {
        let k1 = rhs(x);
        let k2 = rhs(x + 0.5 * h * k1);
        let k3 = rhs(x + 0.5 * h * k2);
        let k4 = rhs(x + h * k3);
        x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let n = (1.0 / dt).ceil() as usize;
    let h = 1.0 / n as f64;
    let mut v = v0;
    for i in 0..n {
        let next = step(v, h);
        if next >= 1.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if step(v, mid) >= 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return (i as f64 * h + hi).min(1.0);
        }
        v = next;
    }
    1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{accumulate_exact, fire_rc, fire_ttfs, sort_spikes};

    #[test]
    fn rk4_agrees_with_closed_form() {
        let train = SpikeTrain::new(vec![0.3, 0.05, 0.8, 0.55]);
        let w = [1.2, -0.7, 0.9, 2.0];
        let p = NeuronParams::new(2.0, -1.5, 0.0, 1.0).unwrap();
        let exact = accumulate_exact(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
        let tr = oracle_rk4(&train, &w, &p, 1e-4);
        assert!((tr.v.last().unwrap() - exact).abs() < 1e-10);
        assert_eq!(*tr.t.last().unwrap(), 1.0);
        assert_eq!(oracle_rk4_final(&train, &w, &p, 1e-4), *tr.v.last().unwrap());
    }

    #[test]
    fn ttfs_oracle_agrees() {
        let train = SpikeTrain::new(vec![0.1, 0.2]);
        let w = [1.5, 1.0];
        let p = NeuronParams::symmetric(3.0).unwrap();
        let exact = fire_ttfs(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
        let rk = oracle_ttfs(&train, &w, &p, 1e-4, 5.0).unwrap();
        assert!((exact - rk).abs() < 1e-9, "{exact} vs {rk}");
    }

    #[test]
    fn discharge_oracle_agrees() {
        for &(v, b) in &[(0.5, 0.154344), (0.0, 0.154344), (0.9, 0.4), (0.3, 0.0)] {
            let rk = oracle_discharge(v, b, 1e-4);
            let cf = fire_rc(v, &NeuronParams::ideal(), b).unwrap();
            assert!((rk - cf).abs() < 1e-9, "v={v} beta={b}: {rk} vs {cf}");
        }
    }
}
