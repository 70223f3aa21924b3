//! Gauss–Jacobi quadrature for `∫_{-1}^{1} f(t) (1 - t)^α (1 + t)^β dt`.
//!
//! Nodes come from the Golub–Welsch eigenproblem, are polished by Newton
//! iteration on the orthonormal Jacobi polynomial, and weights use the
//! Christoffel formula `w_i = 1 / Σ_k p_k(x_i)^2`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sphere_math::ln_gamma;

/// Default node count for a Legendre expansion up to order `max_order`.
pub fn default_node_count(max_order: usize) -> usize {
    (4 * max_order + 20).max(200)
}

#[derive(Debug, Clone)]
pub struct GaussJacobi {
    alpha: f64,
    beta: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

// Recurrence coefficients of the monic Jacobi polynomials: diagonal a_k and
// off-diagonal b_k (b_k = sqrt of the monic β_k), k >= 1.
fn jacobi_matrix(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let ab = alpha + beta;
    let mut diag = Vec::with_capacity(n);
    let mut off = vec![0.0; n + 1];
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        let a = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (s * (s + 2.0))
        };
        diag.push(a);
    }
    for (k, slot) in off.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        let s = 2.0 * kf + ab;
        *slot = if k == 1 {
            (4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab))).sqrt()
        } else {
            (4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (s * s * (s + 1.0) * (s - 1.0)))
                .sqrt()
        };
    }
    (diag, off)
}

impl GaussJacobi {
    /// `n`-point rule for the weight `(1 - t)^alpha (1 + t)^beta`.
    pub fn new(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("quadrature needs at least one node".into()));
        }
        if !(alpha > -1.0 && beta > -1.0) {
            return Err(Error::Domain(format!(
                "Jacobi exponents must exceed -1, got ({alpha}, {beta})"
            )));
        }
        let (diag, off) = jacobi_matrix(n, alpha, beta);
        let mut jm = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            jm[(k, k)] = diag[k];
            if k + 1 < n {
                jm[(k, k + 1)] = off[k + 1];
                jm[(k + 1, k)] = off[k + 1];
            }
        }
        let eig = SymmetricEigen::new(jm);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        let log_mu0 = (alpha + beta + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0)
            + ln_gamma(beta + 1.0)
            - ln_gamma(alpha + beta + 2.0);
        let p0 = (-0.5 * log_mu0).exp();

        // Orthonormal recurrence: off[k+1] p_{k+1} = (x - a_k) p_k - off[k] p_{k-1}.
        let eval = |x: f64| -> (f64, f64, f64) {
            let (mut p_prev, mut p) = (0.0, p0);
            let (mut d_prev, mut d) = (0.0, 0.0);
            let mut sumsq = p * p;
            for k in 0..n {
                let p_next = ((x - diag[k]) * p - off[k] * p_prev) / off[k + 1].max(f64::MIN_POSITIVE);
                let d_next =
                    ((x - diag[k]) * d + p - off[k] * d_prev) / off[k + 1].max(f64::MIN_POSITIVE);
                p_prev = p;
                p = p_next;
                d_prev = d;
                d = d_next;
                if k + 1 < n {
                    sumsq += p * p;
                }
            }
            (p, d, sumsq)
        };

        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            if n > 1 {
                for _ in 0..2 {
                    let (p, d, _) = eval(*x);
                    if d != 0.0 && d.is_finite() {
                        let step = p / d;
                        if step.is_finite() && step.abs() < 1e-6 {
                            *x -= step;
                        }
                    }
                }
            }
            let (_, _, sumsq) = eval(*x);
            weights.push(1.0 / sumsq);
        }
        Ok(Self {
            alpha,
            beta,
            nodes,
            weights,
        })
    }

    /// Rule for the Gegenbauer weight `(1 - t^2)^((q - 3) / 2)`.
    pub fn for_dimension(q: usize, n: usize) -> Result<Self> {
        if q < 3 {
            return Err(Error::Domain(format!("dimension q = {q} must be >= 3")));
        }
        let a = (q as f64 - 3.0) / 2.0;
        Self::new(n, a, a)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = GaussJacobi::new(10, 0.0, 0.0).unwrap();
        assert!((rule.integrate(|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((rule.integrate(|t| t.powi(18)) - 2.0 / 19.0).abs() < 1e-14);
        assert!(rule.integrate(|t| t.powi(7)).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_rule_moments() {
        // ∫ (1-t)^1.5 (1+t)^0.5 dt = 2^3 Γ(2.5)Γ(1.5)/Γ(4)
        let rule = GaussJacobi::new(30, 1.5, 0.5).unwrap();
        let exact = 8.0 * libm::tgamma(2.5) * libm::tgamma(1.5) / libm::tgamma(4.0);
        assert!((rule.integrate(|_| 1.0) - exact).abs() < 1e-13);
        // against a fine midpoint rule on a smooth polynomial moment
        let exact_t = {
            let m = 400_000;
            let h = 2.0 / m as f64;
            (0..m)
                .map(|i| {
                    let t = -1.0 + (i as f64 + 0.5) * h;
                    t * t * (1.0 - t).powf(1.5) * (1.0 + t).sqrt() * h
                })
                .sum::<f64>()
        };
        assert!((rule.integrate(|t| t * t) - exact_t).abs() < 1e-8);
    }

    #[test]
    fn large_rule_is_accurate() {
        let rule = GaussJacobi::for_dimension(16, 240).unwrap();
        assert_eq!(rule.len(), 240);
        let total: f64 = rule.weights().iter().sum();
        let exact = crate::sphere_math::surface_area_ratio(16).unwrap();
        assert!(((total - exact) / exact).abs() < 1e-13);
        assert!(rule.weights().iter().all(|w| *w > 0.0));
        assert!(rule.nodes().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rejects_bad_exponents() {
        assert!(GaussJacobi::new(5, -1.0, 0.0).is_err());
        assert!(GaussJacobi::new(0, 0.0, 0.0).is_err());
    }
}
