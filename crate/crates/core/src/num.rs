//! Scalar kernels shared by the plain forward paths and the tape.
//!
//! Every forward path routes through these helpers so that taped and
//! untaped evaluations agree bit for bit.

use crate::error::{Error, Result};

/// Below this magnitude `exprel`/`log1p_rel` switch to a first-order Taylor form.
const TINY: f64 = 1e-12;

/// `E(x) = (1 - e^{-x}) / x`, with `E(0) = 1`.
#[inline]
pub fn exprel(x: f64) -> f64 {
    if x.abs() < TINY {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Derivative of [`exprel`].
pub fn exprel_deriv(x: f64) -> f64 {
    if x.abs() < 0.5 {
        // E'(x) = sum_{n>=1} n (-x)^{n-1} (-1) / (n+1)!
        let mut sum = 0.0;
        let mut pow = 1.0; // (-x)^{n-1}
        let mut fact = 2.0; // (n+1)!
        for n in 1..=24 {
            sum -= n as f64 * pow / fact;
            pow *= -x;
            fact *= (n + 2) as f64;
        }
        sum
    } else {
        let e = (-x).exp();
        (e * (x + 1.0) - 1.0) / (x * x)
    }
}

/// `psi(y) = ln(1 + y) / y`, with `psi(0) = 1`.
#[inline]
pub fn log1p_rel(y: f64) -> f64 {
    if y.abs() < TINY {
        1.0 - 0.5 * y
    } else {
        y.ln_1p() / y
    }
}

/// Derivative of [`log1p_rel`].
pub fn log1p_rel_deriv(y: f64) -> f64 {
    if y.abs() < 0.1 {
        // psi'(y) = sum_{n>=1} (-1)^n n y^{n-1} / (n+1)
        let mut sum = 0.0;
        let mut pow = 1.0;
        for n in 1..=24 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * n as f64 * pow / (n + 1) as f64;
            pow *= y;
        }
        sum
    } else {
        (y / (1.0 + y) - y.ln_1p()) / (y * y)
    }
}

/// Membrane potential at the end of a sequence of constant-coefficient slots.
///
/// `v = sum_k g_k d_k E(f_k d_k) exp(-sum_{q>k} f_q d_q)` starting from zero.
/// The suffix sum keeps every exponent non-positive because `f >= 0`.
pub fn end_potential(f: &[f64], g: &[f64], widths: &[f64]) -> Result<f64> {
    let k_len = widths.len();
    debug_assert!(f.len() == k_len && g.len() == k_len);
    let mut x = vec![0.0; k_len];
    for k in 0..k_len {
        x[k] = f[k] * widths[k];
    }
    let mut suffix = vec![0.0; k_len];
    let mut acc = 0.0;
    for k in (0..k_len).rev() {
        suffix[k] = acc;
        acc += x[k];
    }
    let mut v = 0.0;
    for k in 0..k_len {
        let term = g[k] * widths[k] * exprel(x[k]) * (-suffix[k]).exp();
        if !term.is_finite() {
            return Err(Error::NumericOverflow { interval: k });
        }
        v += term;
    }
    Ok(v)
}

/// Potential at the start of every slot: `v_0 = 0`, `v_{k+1} = v_k e^{-x_k} + g_k d_k E(x_k)`.
///
/// Returns one entry per slot (the start values). Open-ended slots are fine as
/// long as they come last because their end value is never used.
pub fn slot_start_potentials(f: &[f64], g: &[f64], widths: &[f64]) -> Vec<f64> {
    let k_len = widths.len();
    let mut starts = vec![0.0; k_len];
    let mut v = 0.0;
    for k in 0..k_len {
        starts[k] = v;
        if k + 1 < k_len {
            let x = f[k] * widths[k];
            v = (-x).exp() * v + g[k] * widths[k] * exprel(x);
        }
    }
    starts
}

/// Time after slot start at which the potential reaches `v_th`.
///
/// Solves `v(s) = v_th` for `dv/ds = -f v + g` starting at `v`. Returns `None`
/// when the asymptote `g/f` stays at or below threshold or the crossing falls
/// past `width`. The right slot boundary counts as inside the slot.
#[inline]
pub fn ttfs_crossing(v: f64, f: f64, g: f64, v_th: f64, width: f64) -> Option<f64> {
    if v >= v_th {
        return Some(0.0);
    }
    let d = v_th - v;
    let den = g - f * v_th;
    if den <= 0.0 {
        return None;
    }
    let y = f * d / den;
    let dt = d / den * log1p_rel(y);
    (dt <= width).then_some(dt)
}

/// Dense row-major product `a (n x m) * b (m x p)`.
///
/// Loop order i-j-k with j ascending; the tape's matmul uses the same kernel.
pub fn matmul(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), m * p);
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let row = &mut out[i * p..(i + 1) * p];
        for j in 0..m {
            let aij = a[i * m + j];
            let brow = &b[j * p..(j + 1) * p];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aij * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn exprel_matches_definition_and_limit() {
        assert_eq!(exprel(0.0), 1.0);
        for &x in &[1e-9f64, 1e-4, 0.3, 1.0, 7.5, 40.0] {
            let direct = if x < 1e-3 { 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0 } else { (1.0 - (-x).exp()) / x };
            assert!((exprel(x) - direct).abs() < 1e-9 * direct.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for &x in &[-0.4, -1e-4, 0.0, 1e-5, 0.2, 0.49, 0.51, 2.0, 9.0] {
            assert!((exprel_deriv(x) - central(exprel, x)).abs() < 1e-8, "E' at {x}");
        }
        for &y in &[0.0, 1e-6, 0.05, 0.099, 0.101, 0.7, 3.0, 50.0] {
            assert!((log1p_rel_deriv(y) - central(log1p_rel, y)).abs() < 1e-8, "psi' at {y}");
        }
        assert!((exprel_deriv(0.0) + 0.5).abs() < 1e-15);
        assert!((log1p_rel_deriv(0.0) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn crossing_hits_threshold() {
        let (v, f, g) = (0.2, 0.5, 3.0);
        let dt = ttfs_crossing(v, f, g, 1.0, f64::INFINITY).unwrap();
        let asym = g / f;
        let at = asym + (v - asym) * (-f * dt).exp();
        assert!((at - 1.0).abs() < 1e-12);
        assert!(ttfs_crossing(0.0, 2.0, 2.0, 1.0, f64::INFINITY).is_none());
        assert!(ttfs_crossing(0.0, 0.0, 1.0, 1.0, 0.5).is_none());
        assert_eq!(ttfs_crossing(0.0, 0.0, 1.0, 1.0, 1.0), Some(1.0));
    }

    #[test]
    fn matmul_small() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }
}
