//! Orthonormal spherical harmonics of orders 1 and 2 and the explicit
//! feature map of an order-2 truncated kernel.
//!
//! The raw bases are
//!
//! * order 1: `u_j` for `j = 1..q`;
//! * order 2: `u_j u_j'` for `j < j'` in lexicographic order, then
//!   `u_j² - 1/q` for `j = 2..q`.
//!
//! Orthonormalizing them in this order with exact sphere integrals of
//! monomials gives lower-triangular `M_1`, `M_2` with `Y_l = M_l Φ'_l`.
//! Triangularity depends on the ordering, so it is fixed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::sphere_math::{harmonic_space_dim, ln_gamma, sphere_surface_area};

/// `∫_{S^{q-1}} u_1^{e_1} ··· u_q^{e_q} dσ`, `q = exponents.len()`.
///
/// Zero when any exponent is odd, otherwise
/// `2 Π_j Γ((e_j + 1)/2) / Γ(Σ_j (e_j + 1)/2)`.
pub fn monomial_sphere_integral(exponents: &[u32]) -> f64 {
    let sparse: Vec<(usize, u32)> = exponents
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(j, &e)| (j, e))
        .collect();
    sparse_monomial_integral(exponents.len(), &sparse)
}

fn sparse_monomial_integral(q: usize, powers: &[(usize, u32)]) -> f64 {
    if powers.iter().any(|&(_, e)| e % 2 == 1) {
        return 0.0;
    }
    let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
    let zeros = q - powers.len();
    let total: u32 = powers.iter().map(|&(_, e)| e).sum();
    let log = std::f64::consts::LN_2
        + powers
            .iter()
            .map(|&(_, e)| ln_gamma((e as f64 + 1.0) / 2.0))
            .sum::<f64>()
        + zeros as f64 * half_ln_pi
        - ln_gamma((total as f64 + q as f64) / 2.0);
    log.exp()
}

/// Polynomial in `u_1..u_q` stored as `(coefficient, sparse powers)` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly {
    terms: Vec<(f64, Vec<(usize, u32)>)>,
}

impl SparsePoly {
    fn monomial(coef: f64, powers: Vec<(usize, u32)>) -> Self {
        Self {
            terms: vec![(coef, powers)],
        }
    }

    pub fn terms(&self) -> &[(f64, Vec<(usize, u32)>)] {
        &self.terms
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, powers)| {
                c * powers
                    .iter()
                    .map(|&(j, e)| z[j].powi(e as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// `⟨self, other⟩ = ∫_{S^{q-1}} self · other dσ`, exact.
    pub fn sphere_inner(&self, other: &SparsePoly, q: usize) -> f64 {
        let mut acc = 0.0;
        for (ca, pa) in &self.terms {
            for (cb, pb) in &other.terms {
                acc += ca * cb * sparse_monomial_integral(q, &merge_powers(pa, pb));
            }
        }
        acc
    }
}

fn merge_powers(a: &[(usize, u32)], b: &[(usize, u32)]) -> Vec<(usize, u32)> {
    let mut out: Vec<(usize, u32)> = a.to_vec();
    for &(j, e) in b {
        match out.iter_mut().find(|(k, _)| *k == j) {
            Some(slot) => slot.1 += e,
            None => out.push((j, e)),
        }
    }
    out.sort_by_key(|p| p.0);
    out
}

/// Raw order-1 basis `u_1..u_q`.
pub fn raw_basis_order1(q: usize) -> Vec<SparsePoly> {
    (0..q).map(|j| SparsePoly::monomial(1.0, vec![(j, 1)])).collect()
}

/// Raw order-2 basis: cross terms in lexicographic order, then
/// `u_j² - 1/q` for `j = 2..q`.
pub fn raw_basis_order2(q: usize) -> Vec<SparsePoly> {
    let mut out = Vec::with_capacity(q * (q - 1) / 2 + q - 1);
    for j in 0..q {
        for k in j + 1..q {
            out.push(SparsePoly::monomial(1.0, vec![(j, 1), (k, 1)]));
        }
    }
    for j in 1..q {
        out.push(SparsePoly {
            terms: vec![(1.0, vec![(j, 2)]), (-1.0 / q as f64, vec![])],
        });
    }
    out
}

fn gram_matrix(basis: &[SparsePoly], q: usize) -> DMatrix<f64> {
    let n = basis.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..=i {
            let v = basis[i].sphere_inner(&basis[k], q);
            g[(i, k)] = v;
            g[(k, i)] = v;
        }
    }
    g
}

/// Gram–Schmidt in the given order. With `G = L Lᵀ` (Cholesky), the
/// orthonormalized functions are `L⁻¹ Φ'`, so `M = L⁻¹` is lower triangular
/// with positive diagonal.
fn gram_schmidt_matrix(basis: &[SparsePoly], q: usize) -> Result<DMatrix<f64>> {
    let g = gram_matrix(basis, q);
    let n = g.nrows();
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::Numerical("raw harmonic basis has a singular Gram matrix".into()))?;
    let l = chol.l();
    let mut m = DMatrix::identity(n, n);
    if !l.solve_lower_triangular_mut(&mut m) {
        return Err(Error::Numerical("triangular solve failed".into()));
    }
    Ok(m)
}

/// Orthonormalized order-1 and order-2 harmonics together with the kernel
/// weights `a_l = b_l |S^{q-1}| / N(q, l)`.
#[derive(Debug, Clone)]
pub struct HarmonicBasis {
    q: usize,
    raw1: Vec<SparsePoly>,
    raw2: Vec<SparsePoly>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

/// Mean norm and autocorrelation deviation of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentStats {
    /// `||mean(z)||_2`
    pub mean_norm: f64,
    /// `||mean(z zᵀ) - I/q||_F`
    pub autocorr_deviation: f64,
}

impl HarmonicBasis {
    pub fn build(q: usize, b1: f64, b2: f64) -> Result<Self> {
        if q < 3 {
            return Err(Error::Domain(format!("dimension q = {q} must be >= 3")));
        }
        if !(b1 >= 0.0 && b2 >= 0.0) {
            return Err(Error::Domain("kernel weights must be >= 0".into()));
        }
        let raw1 = raw_basis_order1(q);
        let raw2 = raw_basis_order2(q);
        let m1 = gram_schmidt_matrix(&raw1, q)?;
        let m2 = gram_schmidt_matrix(&raw2, q)?;
        let area = sphere_surface_area(q)?;
        let a1 = b1 * area / harmonic_space_dim(q, 1)?;
        let a2 = b2 * area / harmonic_space_dim(q, 2)?;
        Ok(Self {
            q,
            raw1,
            raw2,
            m1,
            m2,
            b1,
            b2,
            a1,
            a2,
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.b1, self.b2)
    }

    /// `(a_1, a_2)`.
    pub fn scales(&self) -> (f64, f64) {
        (self.a1, self.a2)
    }

    /// Change-of-basis matrix `M_l` for `l ∈ {1, 2}`.
    pub fn change_of_basis(&self, order: usize) -> Result<&DMatrix<f64>> {
        match order {
            1 => Ok(&self.m1),
            2 => Ok(&self.m2),
            _ => Err(Error::Domain(format!(
                "explicit harmonics exist for orders 1 and 2 only, got {order}"
            ))),
        }
    }

    pub fn raw_basis(&self, order: usize) -> Result<&[SparsePoly]> {
        match order {
            1 => Ok(&self.raw1),
            2 => Ok(&self.raw2),
            _ => Err(Error::Domain(format!("no raw basis for order {order}"))),
        }
    }

    /// `Φ'_l(z)`, raw features.
    pub fn raw_features(&self, order: usize, z: &[f64]) -> Result<DVector<f64>> {
        let basis = self.raw_basis(order)?;
        Ok(DVector::from_iterator(
            basis.len(),
            basis.iter().map(|p| p.eval(z)),
        ))
    }

    /// `Y_l(z) = M_l Φ'_l(z)`, orthonormal harmonics of order `l`.
    pub fn harmonics(&self, order: usize, z: &[f64]) -> Result<DVector<f64>> {
        Ok(self.change_of_basis(order)? * self.raw_features(order, z)?)
    }

    /// Exact Gram matrix of the orthonormalized basis of order `l`; the
    /// identity up to rounding.
    pub fn orthonormality_gram(&self, order: usize) -> Result<DMatrix<f64>> {
        let m = self.change_of_basis(order)?;
        let g = gram_matrix(self.raw_basis(order)?, self.q);
        Ok(m * g * m.transpose())
    }

    fn check_unit(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.q {
            return Err(Error::Shape(format!(
                "vector has length {}, basis expects {}",
                z.len(),
                self.q
            )));
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("feature map needs a unit vector, norm {norm}")));
        }
        Ok(())
    }

    /// `Φ(z) = [√a_1 M_1 Φ'_1(z), √a_2 M_2 Φ'_2(z)]`, so that
    /// `Φ(u)·Φ(v) = b_1 P_1(q; u·v) + b_2 P_2(q; u·v)`.
    pub fn feature_map(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.check_unit(z)?;
        let y1 = self.harmonics(1, z)? * self.a1.sqrt();
        let y2 = self.harmonics(2, z)? * self.a2.sqrt();
        let mut out = DVector::zeros(y1.len() + y2.len());
        out.rows_mut(0, y1.len()).copy_from(&y1);
        out.rows_mut(y1.len(), y2.len()).copy_from(&y2);
        Ok(out)
    }

    /// `a_1 ||M_1 mean Φ'_1||² + a_2 ||M_2 mean Φ'_2||²`: the biased squared
    /// MMD to the uniform distribution for the centered kernel
    /// `b_1 P_1 + b_2 P_2`, computed from explicit moments.
    pub fn mmd_via_moments(&self, batch: &EmbeddingBatch) -> Result<f64> {
        if batch.dim() != self.q {
            return Err(Error::Shape(format!(
                "batch has q = {}, basis has q = {}",
                batch.dim(),
                self.q
            )));
        }
        let n = batch.len() as f64;
        let mut mean1 = DVector::zeros(self.raw1.len());
        let mut mean2 = DVector::zeros(self.raw2.len());
        for row in batch.to_rows() {
            mean1 += self.raw_features(1, &row)?;
            mean2 += self.raw_features(2, &row)?;
        }
        mean1 /= n;
        mean2 /= n;
        let t1 = (&self.m1 * mean1).norm_squared();
        let t2 = (&self.m2 * mean2).norm_squared();
        Ok(self.a1 * t1 + self.a2 * t2)
    }

    /// `M_l` as CSV, row-major, 17 significant digits.
    pub fn matrix_csv(&self, order: usize) -> Result<String> {
        Ok(crate::io::matrix_to_csv(self.change_of_basis(order)?))
    }
}

pub fn build_basis(q: usize, b1: f64, b2: f64) -> Result<HarmonicBasis> {
    HarmonicBasis::build(q, b1, b2)
}

pub fn feature_map(basis: &HarmonicBasis, z: &[f64]) -> Result<DVector<f64>> {
    basis.feature_map(z)
}

pub fn mmd_via_moments(basis: &HarmonicBasis, batch: &EmbeddingBatch) -> Result<f64> {
    basis.mmd_via_moments(batch)
}

/// `||mean(z)||` and `||mean(z zᵀ) - I/q||_F`.
pub fn embedding_moment_stats(batch: &EmbeddingBatch) -> MomentStats {
    let z = batch.matrix();
    let n = batch.len() as f64;
    let q = batch.dim();
    let mean = z.row_sum() / n;
    let mut auto = z.transpose() * z / n;
    for j in 0..q {
        auto[(j, j)] -= 1.0 / q as f64;
    }
    MomentStats {
        mean_norm: mean.norm(),
        autocorr_deviation: auto.norm(),
    }
}
