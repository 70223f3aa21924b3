//! Legendre (Gegenbauer) polynomials in dimension `q`, spherical-harmonic
//! space dimensions and hypersphere surface areas.
//!
//! `P_l(q; t)` is normalized so that `P_l(q; 1) = 1`. It is orthogonal on
//! `[-1, 1]` for the weight `(1 - t^2)^((q - 3) / 2)`.

use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Dot products of unit vectors may drift this far past `±1`.
pub const BOUNDARY_SLACK: f64 = 1e-12;

fn check_dim(q: usize, min: usize) -> Result<()> {
    if q < min {
        return Err(Error::Domain(format!("dimension q = {q} must be >= {min}")));
    }
    Ok(())
}

/// Clamps `t` into `[-1, 1]` when it lies within [`BOUNDARY_SLACK`] of the
/// interval, rejects it otherwise.
pub fn clamp_unit(t: f64) -> Result<f64> {
    if !t.is_finite() || t.abs() > 1.0 + BOUNDARY_SLACK {
        return Err(Error::Domain(format!("t = {t} outside [-1, 1]")));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Finite-sum representation of `P_l(q; t)`:
///
/// `l! Γ((q-1)/2) Σ_k (-1/4)^k (1-t²)^k t^(l-2k) / (k! (l-2k)! Γ(k + (q-1)/2))`.
///
/// The Gamma ratio is the reciprocal rising factorial `((q-1)/2)_k`, built
/// up multiplicatively. The alternating sum loses up to about seven digits
/// to cancellation at `l = 30`, so it is accumulated in double-double
/// arithmetic. Slow; the recurrence in [`LegendreTable`] is the production
/// path.
pub fn legendre_closed_form(q: usize, l: usize, t: f64) -> Result<f64> {
    check_dim(q, 3)?;
    let t = clamp_unit(t)?;
    let a = (q as f64 - 1.0) / 2.0;
    let td = TwoFloat::from(t);
    let s = TwoFloat::from(1.0) - td * td;
    // coef_k = l! / (k! (l-2k)! (a)_k) * (-1/4)^k
    let mut t_pow = vec![TwoFloat::from(1.0); l + 1];
    for i in 1..=l {
        t_pow[i] = t_pow[i - 1] * td;
    }
    let mut s_pow = TwoFloat::from(1.0);
    let mut coef = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(0.0);
    for k in 0..=l / 2 {
        sum += coef * s_pow * t_pow[l - 2 * k];
        s_pow *= s;
        let m = (l - 2 * k) as f64;
        // Both products are exact in f64 for the orders in use.
        coef = coef * (-0.25 * m * (m - 1.0)) / ((k as f64 + 1.0) * (a + k as f64));
    }
    Ok(sum.hi())
}

/// Cached three-term recurrence for `P_0(q; ·) .. P_L(q; ·)`.
///
/// `P_{l+1} = ((2l + q - 2) t P_l - l P_{l-1}) / (l + q - 2)`, the
/// Gegenbauer recurrence with `α = (q - 2) / 2` renormalized to `P_l(1) = 1`.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    q: usize,
    max_order: usize,
    // (a_l, c_l) with P_{l+1} = a_l t P_l - c_l P_{l-1}
    coeffs: Vec<(f64, f64)>,
}

impl LegendreTable {
    pub fn new(q: usize, max_order: usize) -> Result<Self> {
        check_dim(q, 3)?;
        let qf = q as f64;
        let coeffs = (0..max_order)
            .map(|l| {
                let lf = l as f64;
                let denom = lf + qf - 2.0;
                ((2.0 * lf + qf - 2.0) / denom, lf / denom)
            })
            .collect();
        Ok(Self {
            q,
            max_order,
            coeffs,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Writes `P_0(t) .. P_L(t)` into `out` without domain checks. Valid as a
    /// polynomial for any real `t`.
    pub fn fill_unchecked(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.max_order + 1);
        out[0] = 1.0;
        if self.max_order == 0 {
            return;
        }
        out[1] = t;
        for l in 1..self.max_order {
            let (a, c) = self.coeffs[l];
            out[l + 1] = a * t * out[l] - c * out[l - 1];
        }
    }

    /// `Σ_l w_l P_l(t)` for `w.len() <= L + 1`, without allocating.
    pub fn series(&self, t: f64, w: &[f64]) -> f64 {
        debug_assert!(w.len() <= self.max_order + 1);
        let Some((&w0, rest)) = w.split_first() else {
            return 0.0;
        };
        let mut acc = w0;
        let (mut prev, mut cur) = (1.0, t);
        for (l, wl) in rest.iter().enumerate() {
            acc += wl * cur;
            if l + 1 < self.max_order {
                let (a, c) = self.coeffs[l + 1];
                let next = a * t * cur - c * prev;
                prev = cur;
                cur = next;
            }
        }
        acc
    }

    /// `P_0(t) .. P_L(t)` for one argument.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let t = clamp_unit(t)?;
        let mut out = vec![0.0; self.max_order + 1];
        self.fill_unchecked(t, &mut out);
        Ok(out)
    }

    /// Single order `l <= max_order` at `t`.
    pub fn value(&self, l: usize, t: f64) -> Result<f64> {
        if l > self.max_order {
            return Err(Error::Domain(format!(
                "order {l} exceeds table order {}",
                self.max_order
            )));
        }
        Ok(self.evaluate(t)?[l])
    }

    /// Matrix with one row per order `l = 0..=L` and one column per entry of
    /// `t_values`.
    pub fn evaluate_many(&self, t_values: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut rows = vec![vec![0.0; t_values.len()]; self.max_order + 1];
        let mut buf = vec![0.0; self.max_order + 1];
        for (j, &t) in t_values.iter().enumerate() {
            self.fill_unchecked(clamp_unit(t)?, &mut buf);
            for (row, v) in rows.iter_mut().zip(&buf) {
                row[j] = *v;
            }
        }
        Ok(rows)
    }
}

/// Recurrence evaluation of `P_0..P_L` at every `t`: rows are orders.
pub fn legendre_recurrence(table: &LegendreTable, t_values: &[f64]) -> Result<Vec<Vec<f64>>> {
    table.evaluate_many(t_values)
}

/// `P_l(q; t)` via the recurrence.
pub fn legendre(q: usize, l: usize, t: f64) -> Result<f64> {
    LegendreTable::new(q, l)?.value(l, t)
}

/// Unchecked recurrence for a single order, usable slightly outside
/// `[-1, 1]` (loss gradients at off-sphere finite-difference probes).
pub fn legendre_unchecked(q: usize, l: usize, t: f64) -> f64 {
    let qf = q as f64;
    let (mut prev, mut cur) = (1.0, t);
    if l == 0 {
        return prev;
    }
    for k in 1..l {
        let kf = k as f64;
        let next = ((2.0 * kf + qf - 2.0) * t * cur - kf * prev) / (kf + qf - 2.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `d/dt P_l(q; t) = l (l + q - 2) / (q - 1) · P_{l-1}(q + 2; t)`.
pub fn legendre_derivative(q: usize, l: usize, t: f64) -> Result<f64> {
    check_dim(q, 3)?;
    let t = clamp_unit(t)?;
    Ok(legendre_derivative_unchecked(q, l, t))
}

pub fn legendre_derivative_unchecked(q: usize, l: usize, t: f64) -> f64 {
    if l == 0 {
        return 0.0;
    }
    let lf = l as f64;
    let qf = q as f64;
    lf * (lf + qf - 2.0) / (qf - 1.0) * legendre_unchecked(q + 2, l - 1, t)
}

/// Natural log of the Gamma function for positive arguments.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `N(q, l)`, the dimension of the space of order-`l` spherical harmonics
/// in `R^q`. Integer-valued; returned as `f64` because it overflows `u64`
/// for large `q` and `l`.
pub fn harmonic_space_dim(q: usize, l: usize) -> Result<f64> {
    check_dim(q, 3)?;
    match l {
        0 => Ok(1.0),
        1 => Ok(q as f64),
        _ => {
            let (qf, lf) = (q as f64, l as f64);
            // (2l + q - 2) (l + q - 3)! / (l! (q - 2)!)
            let log_n = (2.0 * lf + qf - 2.0).ln() + ln_gamma(lf + qf - 2.0)
                - ln_gamma(lf + 1.0)
                - ln_gamma(qf - 1.0);
            Ok(log_n.exp().round())
        }
    }
}

/// `|S^{q-1}| = 2 π^{q/2} / Γ(q/2)`.
pub fn sphere_surface_area(q: usize) -> Result<f64> {
    check_dim(q, 2)?;
    let half = q as f64 / 2.0;
    Ok((std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() - ln_gamma(half)).exp())
}

/// `|S^{q-1}| / |S^{q-2}| = √π Γ((q-1)/2) / Γ(q/2)`, which is also
/// `∫_{-1}^{1} (1 - t^2)^((q-3)/2) dt`.
pub fn surface_area_ratio(q: usize) -> Result<f64> {
    check_dim(q, 3)?;
    let qf = q as f64;
    Ok((0.5 * std::f64::consts::PI.ln() + ln_gamma((qf - 1.0) / 2.0) - ln_gamma(qf / 2.0)).exp())
}

/// `∫ P_l(q; t)^2 (1 - t^2)^((q-3)/2) dt = (|S^{q-1}| / |S^{q-2}|) / N(q, l)`.
pub fn legendre_weight_norm(q: usize, l: usize) -> Result<f64> {
    Ok(surface_area_ratio(q)? / harmonic_space_dim(q, l)?)
}
