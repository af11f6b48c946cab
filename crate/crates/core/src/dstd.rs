//! Differentiable spike-time discretization.
//!
//! Input spike times are spread onto a uniform grid with triangular "hat"
//! weights. Between grid points the neuron coefficients are constant, so the
//! membrane update costs O(M) per neuron regardless of the input count.
//!
//! Grid layout: regular points `T_m = m * dtau - t_off` for `m = 0..=M` with
//! `dtau = H / M`. In RC-Spike mode a terminal point at `t = 1` closes the
//! accumulation window, and spikes later than `T_M` are split between `T_M`
//! and that terminal point. In TTFS mode the last slot `[T_M, inf)` is open.
//! Either way there are `M + 1` slots and slot `k` starts at `T_k`. Spikes
//! outside the grid put their whole mass on the nearest end point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{fired, NeuronParams, SpikeTrain, NO_SPIKE};
use crate::num;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridMode {
    /// Accumulation window `[0, 1]` followed by a firing phase.
    RcSpike,
    /// Open-ended accumulation; the grid covers `[0, horizon]`.
    Ttfs { horizon: f64 },
}

/// How the grid offset is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetPolicy {
    /// Explicit offset in `[0, dtau)`; zero gives the unshifted grid.
    Fixed(f64),
    /// `dtau / 2`.
    Centered,
    /// Uniform in `(0, dtau)`, drawn from the caller's generator.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DstdGrid {
    pub m_steps: usize,
    pub delta_tau: f64,
    pub t_offset: f64,
    pub mode: GridMode,
    /// `M + 2` points in RC-Spike mode, `M + 1` in TTFS mode.
    pub points: Vec<f64>,
}

pub fn build_grid<R: Rng + ?Sized>(m: usize, mode: GridMode, offset: OffsetPolicy, rng: &mut R) -> Result<DstdGrid> {
    if m < 2 {
        return Err(Error::InvalidGrid(format!("M must be at least 2, got {m}")));
    }
    let horizon = match mode {
        GridMode::RcSpike => 1.0,
        GridMode::Ttfs { horizon } => {
            if !(horizon > 0.0 && horizon.is_finite()) {
                return Err(Error::InvalidGrid(format!("TTFS horizon must be positive, got {horizon}")));
            }
            horizon
        }
    };
    let dtau = horizon / m as f64;
    let t_off = match offset {
        OffsetPolicy::Fixed(t) => {
            if !(t >= 0.0 && t < dtau) {
                return Err(Error::InvalidGrid(format!("offset {t} outside [0, {dtau})")));
            }
            t
        }
        OffsetPolicy::Centered => 0.5 * dtau,
        OffsetPolicy::Random => loop {
            let t = rng.gen::<f64>() * dtau;
            if t > 0.0 {
                break t;
            }
        },
    };
    let mut points: Vec<f64> = (0..=m).map(|i| i as f64 * dtau - t_off).collect();
    if mode == GridMode::RcSpike {
        points.push(1.0);
    }
    Ok(DstdGrid { m_steps: m, delta_tau: dtau, t_offset: t_off, mode, points })
}

impl DstdGrid {
    pub fn slot_count(&self) -> usize {
        self.m_steps + 1
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn is_rc(&self) -> bool {
        self.mode == GridMode::RcSpike
    }

    /// Start time of each slot. Slot 0 opens at `T_0 <= 0`, so the linear
    /// (beta = 0) potential is reproduced exactly by the hat split.
    pub fn slot_starts(&self) -> Vec<f64> {
        self.points[..self.slot_count()].to_vec()
    }

    /// Width of each slot; the last TTFS slot is infinite.
    pub fn slot_widths(&self) -> Vec<f64> {
        let starts = self.slot_starts();
        (0..self.slot_count())
            .map(|k| match self.points.get(k + 1) {
                Some(&next) => next - starts[k],
                None => f64::INFINITY,
            })
            .collect()
    }

    /// Support half-width of the hat at `point` for a spike at `t`.
    ///
    /// In RC-Spike mode the last stretch `[T_M, 1]` is only `t_off` wide, so
    /// spikes inside it use that width for both neighbours.
    #[inline]
    pub fn hat_width(&self, point: usize, t: f64) -> f64 {
        let m = self.m_steps;
        if self.is_rc() && (point == m + 1 || (point == m && t > self.points[m])) {
            self.t_offset
        } else {
            self.delta_tau
        }
    }

    /// Hat value of point `m` for a spike at `t`.
    #[inline]
    pub fn hat(&self, point: usize, t: f64) -> f64 {
        let w = self.hat_width(point, t);
        if w <= 0.0 {
            // Zero offset: the terminal point coincides with T_M and carries no mass.
            return 0.0;
        }
        let q = (w - (self.points[point] - t).abs()) / w;
        if q > 0.0 {
            q
        } else {
            0.0
        }
    }
}

/// Hat weights `s` and their running sums `S` along the grid, row-major `(input, point)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeVariables {
    pub n_inputs: usize,
    pub n_points: usize,
    pub s: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl SpikeVariables {
    pub fn s(&self, j: usize, m: usize) -> f64 {
        self.s[j * self.n_points + m]
    }

    pub fn cum(&self, j: usize, m: usize) -> f64 {
        self.cumulative[j * self.n_points + m]
    }
}

/// Spreads each spike over its two neighbouring grid points.
///
/// Sentinels get no mass. Spikes before the first point put all of it on
/// point 0, and TTFS spikes after the last point (inside the open final slot)
/// put all of it on point `M`.
pub fn discretize(train: &SpikeTrain, grid: &DstdGrid) -> SpikeVariables {
    let n = train.len();
    let np = grid.point_count();
    let mut s = vec![0.0; n * np];
    let mut cumulative = vec![0.0; n * np];
    for (j, &t) in train.times.iter().enumerate() {
        let row = &mut s[j * np..(j + 1) * np];
        if !fired(t) {
            // no mass
        } else if t < grid.points[0] {
            row[0] = 1.0;
        } else if !grid.is_rc() && t > grid.points[np - 1] {
            row[np - 1] = 1.0;
        } else {
            for (m, r) in row.iter_mut().enumerate() {
                *r = grid.hat(m, t);
            }
        }
        let mut acc = 0.0;
        for m in 0..np {
            acc += s[j * np + m];
            cumulative[j * np + m] = acc;
        }
    }
    SpikeVariables { n_inputs: n, n_points: np, s, cumulative }
}

/// Per-slot `f~` and `g~`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// `f~_k = alpha + sum_j beta_j w_j S_jk`, `g~_k = sum_j w_j S_jk` for every slot `k`.
pub fn coefficients_fg(sv: &SpikeVariables, weights: &[f64], p: &NeuronParams, slots: usize) -> Result<Coefficients> {
    if weights.len() != sv.n_inputs {
        return Err(Error::Shape(format!("{} weights for {} inputs", weights.len(), sv.n_inputs)));
    }
    if slots > sv.n_points {
        return Err(Error::Shape(format!("{slots} slots but only {} grid points", sv.n_points)));
    }
    let mut f = vec![0.0; slots];
    let mut g = vec![0.0; slots];
    for (j, &w) in weights.iter().enumerate() {
        let bw = w * p.beta_for(w);
        for k in 0..slots {
            let c = sv.cum(j, k);
            g[k] += w * c;
            f[k] += bw * c;
        }
    }
    for fk in f.iter_mut() {
        *fk += p.alpha;
    }
    Ok(Coefficients { f, g })
}

/// Discretized end-of-window potential (RC-Spike).
pub fn accumulate_dstd(fg: &Coefficients, grid: &DstdGrid) -> Result<f64> {
    if !grid.is_rc() {
        return Err(Error::InvalidGrid("end-of-window potential needs an RC-Spike grid".into()));
    }
    num::end_potential(&fg.f, &fg.g, &grid.slot_widths())
}

/// Discretized first threshold crossing, or [`NO_SPIKE`].
pub fn fire_ttfs_dstd(fg: &Coefficients, grid: &DstdGrid, p: &NeuronParams) -> f64 {
    let widths = grid.slot_widths();
    let starts = grid.slot_starts();
    let v = num::slot_start_potentials(&fg.f, &fg.g, &widths);
    for k in 0..widths.len() {
        if let Some(dt) = num::ttfs_crossing(v[k], fg.f[k], fg.g[k], p.v_th, widths[k]) {
            return starts[k] + dt;
        }
    }
    NO_SPIKE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{accumulate_exact, sort_spikes};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn ttfs_grid_near_zero_offset() {
        let g = build_grid(4, GridMode::Ttfs { horizon: 1.0 }, OffsetPolicy::Fixed(1e-13), &mut rng()).unwrap();
        for (a, b) in g.points.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rc_grid_layout() {
        let g = build_grid(4, GridMode::RcSpike, OffsetPolicy::Centered, &mut rng()).unwrap();
        assert_eq!(g.points, vec![-0.125, 0.125, 0.375, 0.625, 0.875, 1.0]);
        assert_eq!(g.slot_count(), 5);
        let w = g.slot_widths();
        // The window opens at T_0 = -t_off and closes at 1.
        assert!((w.iter().sum::<f64>() - 1.125).abs() < 1e-15);
        assert_eq!(w, vec![0.25, 0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(build_grid(1, GridMode::RcSpike, OffsetPolicy::Centered, &mut rng()).is_err());
        assert!(build_grid(4, GridMode::RcSpike, OffsetPolicy::Fixed(0.3), &mut rng()).is_err());
        assert!(build_grid(4, GridMode::RcSpike, OffsetPolicy::Fixed(-0.01), &mut rng()).is_err());
    }

    #[test]
    fn zero_offset_rc_grid_is_usable() {
        let g = build_grid(4, GridMode::RcSpike, OffsetPolicy::Fixed(0.0), &mut rng()).unwrap();
        assert_eq!(g.points, vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.0]);
        let sv = discretize(&SpikeTrain::new(vec![1.0, 0.9]), &g);
        assert_eq!(sv.s(0, 4), 1.0);
        assert_eq!(sv.s(0, 5), 0.0);
        assert!((sv.cum(1, 5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hat_on_grid_point_and_midpoint() {
        let g = build_grid(4, GridMode::Ttfs { horizon: 1.0 }, OffsetPolicy::Fixed(1e-13), &mut rng()).unwrap();
        let sv = discretize(&SpikeTrain::new(vec![0.5 - 1e-13, 0.375 - 1e-13]), &g);
        assert!((sv.s(0, 2) - 1.0).abs() < 1e-12);
        assert!((sv.s(1, 1) - 0.5).abs() < 1e-12 && (sv.s(1, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mass_is_conserved_inside_window() {
        let g = build_grid(7, GridMode::RcSpike, OffsetPolicy::Fixed(0.03), &mut rng()).unwrap();
        let sv = discretize(&SpikeTrain::new(vec![0.0, 0.011, 0.5, 0.98, 1.0, NO_SPIKE]), &g);
        for j in 0..5 {
            let total: f64 = (0..sv.n_points).map(|m| sv.s(j, m)).sum();
            assert!((total - 1.0).abs() < 1e-12, "input {j}: {total}");
        }
        assert_eq!(sv.cum(5, sv.n_points - 1), 0.0);
    }

    #[test]
    fn linear_neuron_is_exact() {
        // With beta = 0 the hat split preserves sum_j w_j (1 - t_j) exactly.
        let g = build_grid(3, GridMode::RcSpike, OffsetPolicy::Fixed(0.1), &mut rng()).unwrap();
        let train = SpikeTrain::new(vec![0.02, 0.25, 0.33, 0.71, 0.95]);
        let w = [0.7, 0.4, -0.2, 0.9, 0.3];
        let p = NeuronParams::ideal();
        let fg = coefficients_fg(&discretize(&train, &g), &w, &p, g.slot_count()).unwrap();
        let d = accumulate_dstd(&fg, &g).unwrap();
        let e = accumulate_exact(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
        assert!((d - e).abs() < 1e-14, "{d} vs {e}");
    }

    #[test]
    fn spikes_on_grid_points_are_exact() {
        let g = build_grid(4, GridMode::RcSpike, OffsetPolicy::Centered, &mut rng()).unwrap();
        let train = SpikeTrain::new(vec![0.125, 0.625, 0.375]);
        let w = [1.1, -0.6, 0.8];
        let p = NeuronParams::symmetric(2.0).unwrap();
        let fg = coefficients_fg(&discretize(&train, &g), &w, &p, g.slot_count()).unwrap();
        let d = accumulate_dstd(&fg, &g).unwrap();
        let e = accumulate_exact(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
        assert!((d - e).abs() < 1e-14, "{d} vs {e}");
    }

    #[test]
    fn dstd_ttfs_matches_exact_for_grid_aligned_spikes() {
        let g = build_grid(8, GridMode::Ttfs { horizon: 2.0 }, OffsetPolicy::Centered, &mut rng()).unwrap();
        let train = SpikeTrain::new(vec![0.125, 0.375]);
        let w = [1.5, 1.0];
        let p = NeuronParams::symmetric(4.0).unwrap();
        let fg = coefficients_fg(&discretize(&train, &g), &w, &p, g.slot_count()).unwrap();
        let d = fire_ttfs_dstd(&fg, &g, &p);
        let e = crate::neuron::fire_ttfs(&sort_spikes(&train).unwrap(), &w, &p).unwrap();
        assert!((d - e).abs() < 1e-13, "{d} vs {e}");
    }
}
