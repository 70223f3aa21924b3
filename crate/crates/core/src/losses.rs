//! Training losses and their gradients with respect to the embeddings,
//! treated as free vectors in `R^q`. Sphere constraints are the caller's
//! business (the optimizer projects onto the tangent space).
//!
//! Pairwise sums are evaluated column by column, optionally in parallel,
//! and reduced in a fixed order so results do not depend on the thread
//! count.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};

/// Covariance columns processed per block in the VICReg term.
const COVARIANCE_BLOCK: usize = 256;

/// Hyperparameters shared by the objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Alignment weight `λ`.
    pub lambda: f64,
    /// Regularizer weight `μ`.
    pub mu: f64,
    /// SimCLR temperature `τ`.
    pub tau: f64,
    /// AUH scale `t`.
    pub t_scale: f64,
    /// VICReg covariance weight `ν`.
    pub nu: f64,
    /// VICReg standard-deviation target `γ`.
    pub gamma: f64,
    /// VICReg variance stabilizer `ε`.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 0.5,
            tau: 0.15,
            t_scale: 2.5,
            nu: 1.0,
            gamma: 1.0,
            epsilon: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("tau", self.tau),
            ("t_scale", self.t_scale),
            ("nu", self.nu),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be > 0")));
            }
        }
        // λ = 0 is allowed for uniformity-only runs.
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Which regularizer completes the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    Sfrik,
    Auh,
    Simclr,
    Vicreg,
}

impl Regularizer {
    pub fn name(self) -> &'static str {
        match self {
            Regularizer::Sfrik => "sfrik",
            Regularizer::Auh => "auh",
            Regularizer::Simclr => "simclr",
            Regularizer::Vicreg => "vicreg",
        }
    }

    /// Whether embeddings live on the sphere for this method.
    pub fn normalized(self) -> bool {
        self != Regularizer::Vicreg
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfrik" => Ok(Regularizer::Sfrik),
            "auh" => Ok(Regularizer::Auh),
            "simclr" => Ok(Regularizer::Simclr),
            "vicreg" => Ok(Regularizer::Vicreg),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Value, named terms and one gradient matrix per input batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub value: f64,
    pub terms: BTreeMap<String, f64>,
    #[serde(skip)]
    pub gradients: Vec<DMatrix<f64>>,
    pub grad_norm: f64,
}

impl LossReport {
    fn new(value: f64, terms: &[(&str, f64)], gradients: Vec<DMatrix<f64>>) -> Self {
        let grad_norm = gradients
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        Self {
            value,
            terms: terms.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            gradients,
            grad_norm,
        }
    }

    /// `{"value", "terms", "grad_norm"}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_pair(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<()> {
    if z1.len() != z2.len() || z1.dim() != z2.dim() {
        return Err(Error::Shape(format!(
            "views differ in shape: {}x{} vs {}x{}",
            z1.len(),
            z1.dim(),
            z2.len(),
            z2.dim()
        )));
    }
    Ok(())
}

fn gram(z: &DMatrix<f64>) -> DMatrix<f64> {
    z * z.transpose()
}

/// Applies `f` to every entry of a symmetric matrix, returning the ordered
/// sum of values and the matrix of derivatives.
fn map_symmetric<F>(g: &DMatrix<f64>, f: F) -> (f64, DMatrix<f64>)
where
    F: Fn(usize, usize, f64) -> (f64, f64) + Sync,
{
    let n = g.nrows();
    let mut d = DMatrix::zeros(n, n);
    let sums: Vec<f64> = d
        .as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .map(|(j, col)| {
            let mut acc = 0.0;
            for (i, out) in col.iter_mut().enumerate() {
                let (v, dv) = f(i, j, g[(i, j)]);
                acc += v;
                *out = dv;
            }
            acc
        })
        .collect();
    (sums.iter().sum(), d)
}

/// `(diag(W 1) - W) Z`, the gradient shape of distance-based sums.
fn laplacian_times(w: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = -(w * z);
    for (i, s) in w.column_sum().iter().enumerate() {
        let mut row = out.row_mut(i);
        row += z.row(i) * *s;
    }
    out
}

/// `(1/|I|) Σ ||z_i^(1) - z_i^(2)||²`.
pub fn alignment_loss(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<LossReport> {
    check_pair(z1, z2)?;
    let n = z1.len() as f64;
    let diff = z1.matrix() - z2.matrix();
    let value = diff.norm_squared() / n;
    let g1 = &diff * (2.0 / n);
    let g2 = -&g1;
    Ok(LossReport::new(value, &[("align", value)], vec![g1, g2]))
}

/// Biased squared-MMD estimate `(1/|I|²) Σ_i Σ_j φ̃(z_i · z_j)`, diagonal
/// included. Truncations of order at most 3 use the closed-form polynomials.
///
/// Meaningful for unit rows; other rows are accepted so that gradients can
/// be checked in free coordinates.
pub fn uniformity_loss(spec: &KernelSpec, z: &EmbeddingBatch) -> Result<LossReport> {
    uniformity_impl(spec, z, true)
}

/// Same as [`uniformity_loss`] but always through the Legendre evaluator.
pub fn uniformity_loss_generic(spec: &KernelSpec, z: &EmbeddingBatch) -> Result<LossReport> {
    uniformity_impl(spec, z, false)
}

/// `φ̃(t)` and `φ̃'(t)` for `b_1 P_1 + b_2 P_2 + b_3 P_3`.
fn low_order_poly(q: f64, b: [f64; 3]) -> impl Fn(f64) -> (f64, f64) + Sync {
    move |t: f64| {
        let t2 = t * t;
        let v = b[0] * t
            + b[1] * (q * t2 - 1.0) / (q - 1.0)
            + b[2] * ((q + 2.0) * t2 * t - 3.0 * t) / (q - 1.0);
        let dv = b[0]
            + b[1] * 2.0 * q * t / (q - 1.0)
            + b[2] * (3.0 * (q + 2.0) * t2 - 3.0) / (q - 1.0);
        (v, dv)
    }
}

fn uniformity_impl(spec: &KernelSpec, z: &EmbeddingBatch, fast: bool) -> Result<LossReport> {
    if !spec.is_centered() {
        return Err(Error::InvalidKernel(
            "uniformity loss needs a centered kernel (b_0 removed)".into(),
        ));
    }
    if spec.q() != z.dim() {
        return Err(Error::Shape(format!(
            "kernel has q = {}, batch has q = {}",
            spec.q(),
            z.dim()
        )));
    }
    let zm = z.matrix();
    let n = z.len() as f64;
    let g = gram(zm);
    let f = spec.evaluator()?;

    if let Some((c, p)) = f.distance_form() {
        // φ̃ = c - (r²)^p with r² = ||z_i||² + ||z_j||² - 2 z_i·z_j.
        let (sum, w) = map_symmetric(&g, |i, j, gij| {
            if i == j {
                return (c, 0.0);
            }
            let r2 = (g[(i, i)] + g[(j, j)] - 2.0 * gij).max(0.0);
            if r2 == 0.0 {
                (c, 0.0)
            } else {
                (c - r2.powf(p), -p * r2.powf(p - 1.0))
            }
        });
        let value = sum / (n * n);
        let grad = laplacian_times(&w, zm) * (4.0 / (n * n));
        return Ok(LossReport::new(value, &[("unif", value)], vec![grad]));
    }

    let low_order = match (spec.family(), spec.truncation_order()) {
        (KernelFamily::Truncated, Some(order)) if fast && order <= 3 => {
            let c = spec.coefficients_up_to(3)?;
            Some(low_order_poly(spec.q() as f64, [c[1], c[2], c[3]]))
        }
        _ => None,
    };
    let (sum, d) = match low_order {
        Some(poly) => map_symmetric(&g, |_, _, t| poly(t)),
        None => map_symmetric(&g, |_, _, t| (f.value(t), f.derivative(t))),
    };
    let value = sum / (n * n);
    let grad = d * zm * (2.0 / (n * n));
    Ok(LossReport::new(value, &[("unif", value)], vec![grad]))
}

/// `λ ℓ_a(Z1, Z2) + μ (ℓ_u(Z1) + ℓ_u(Z2))`.
pub fn total_loss(
    weights: &LossWeights,
    spec: &KernelSpec,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
) -> Result<LossReport> {
    check_pair(z1, z2)?;
    let align = alignment_loss(z1, z2)?;
    let u1 = uniformity_loss(spec, z1)?;
    let u2 = uniformity_loss(spec, z2)?;
    let reg = u1.value + u2.value;
    combine(weights, align, reg, vec![u1.gradients[0].clone(), u2.gradients[0].clone()], &[])
}

fn combine(
    weights: &LossWeights,
    align: LossReport,
    reg: f64,
    reg_grads: Vec<DMatrix<f64>>,
    extra: &[(&str, f64)],
) -> Result<LossReport> {
    let value = weights.lambda * align.value + weights.mu * reg;
    let grads = align
        .gradients
        .iter()
        .zip(&reg_grads)
        .map(|(ga, gr)| ga * weights.lambda + gr * weights.mu)
        .collect();
    let mut terms = vec![("align", align.value), ("reg", reg)];
    terms.extend_from_slice(extra);
    Ok(LossReport::new(value, &terms, grads))
}

/// `(1/(2|I|)) Σ_{v,i} log Σ_{(v',i') ≠ (v,i)} exp(z_i^(v) · z_i'^(v') / τ)`.
pub fn simclr_regularizer(
    tau: f64,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
) -> Result<LossReport> {
    check_pair(z1, z2)?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("temperature {tau} must be > 0")));
    }
    let n = z1.len();
    let x = z1.stacked(z2)?.into_matrix();
    let s = gram(&x) / tau;
    let m = 2 * n;
    // Column a holds the softmax over b != a of s[(a, b)].
    let mut p = DMatrix::zeros(m, m);
    let lse: Vec<f64> = p
        .as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .map(|(a, col)| {
            let max = (0..m)
                .filter(|&b| b != a)
                .map(|b| s[(a, b)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (b, out) in col.iter_mut().enumerate() {
                *out = if b == a { 0.0 } else { (s[(a, b)] - max).exp() };
                total += *out;
            }
            for out in col.iter_mut() {
                *out /= total;
            }
            max + total.ln()
        })
        .collect();
    let value = lse.iter().sum::<f64>() / m as f64;
    // p is stored transposed (column a = row a of the softmax matrix).
    let sym = &p + p.transpose();
    let grad = sym * &x / (m as f64 * tau);
    let g1 = grad.rows(0, n).into_owned();
    let g2 = grad.rows(n, n).into_owned();
    Ok(LossReport::new(value, &[("reg", value)], vec![g1, g2]))
}

fn auh_view(t: f64, z: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let g = gram(z);
    let (_, e) = map_symmetric(&g, |i, j, gij| {
        let r2 = g[(i, i)] + g[(j, j)] - 2.0 * gij;
        let e = (-t * r2).exp();
        (e, e)
    });
    let total: f64 = e.column_sum().iter().sum();
    // d log S / dz_k = -(4t / S) Σ_j e_kj (z_k - z_j)
    let grad = laplacian_times(&e, z) * (-4.0 * t / total);
    (total.ln(), grad)
}

/// `(1/(2|I|²)) Σ_v log Σ_{i,i'} exp(-t ||z_i^(v) - z_i'^(v)||²)`.
pub fn auh_regularizer(
    t_scale: f64,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
) -> Result<LossReport> {
    check_pair(z1, z2)?;
    if !(t_scale > 0.0) {
        return Err(Error::Domain(format!("scale {t_scale} must be > 0")));
    }
    let n = z1.len() as f64;
    let scale = 1.0 / (2.0 * n * n);
    let (l1, g1) = auh_view(t_scale, z1.matrix());
    let (l2, g2) = auh_view(t_scale, z2.matrix());
    let value = scale * (l1 + l2);
    Ok(LossReport::new(value, &[("reg", value)], vec![g1 * scale, g2 * scale]))
}

/// Variance and covariance terms of one view with their gradients.
struct VicregView {
    variance: f64,
    covariance: f64,
    grad_variance: DMatrix<f64>,
    grad_covariance: DMatrix<f64>,
}

fn vicreg_view(z: &DMatrix<f64>, gamma: f64, epsilon: f64) -> VicregView {
    let (n, q) = z.shape();
    let nf = n as f64;
    let qf = q as f64;
    let mean = z.row_mean();
    let mut xc = z.clone();
    for mut row in xc.row_iter_mut() {
        row -= &mean;
    }

    let mut variance = 0.0;
    let mut grad_variance = DMatrix::zeros(n, q);
    for j in 0..q {
        let col = xc.column(j);
        let std = (col.norm_squared() / (nf - 1.0) + epsilon).sqrt();
        if std < gamma {
            variance += (gamma - std) / qf;
            grad_variance
                .column_mut(j)
                .axpy(-1.0 / (qf * (nf - 1.0) * std), &col, 0.0);
        }
    }

    // C = Xcᵀ Xc / (n - 1) is formed one block of columns at a time.
    let xt = xc.transpose();
    let mut off_sq = 0.0;
    let mut grad_covariance = DMatrix::zeros(n, q);
    let mut start = 0;
    while start < q {
        let width = COVARIANCE_BLOCK.min(q - start);
        let mut c = &xt * xc.columns(start, width) / (nf - 1.0);
        for k in 0..width {
            c[(start + k, k)] = 0.0;
        }
        off_sq += c.norm_squared();
        grad_covariance
            .columns_mut(start, width)
            .copy_from(&(&xc * &c));
        start += width;
    }
    grad_covariance *= 4.0 / (qf * (nf - 1.0));

    VicregView {
        variance,
        covariance: off_sq / qf,
        grad_variance,
        grad_covariance,
    }
}

/// `½ [v(Z1) + v(Z2)] + ν/(2μ) [c(Z1) + c(Z2)]` with the hinge variance and
/// off-diagonal covariance terms. Embeddings need not be normalized.
pub fn vicreg_regularizer(
    weights: &LossWeights,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
) -> Result<LossReport> {
    check_pair(z1, z2)?;
    if z1.len() < 2 {
        return Err(Error::Domain(
            "covariance needs at least two embeddings per view".into(),
        ));
    }
    let a = vicreg_view(z1.matrix(), weights.gamma, weights.epsilon);
    let b = vicreg_view(z2.matrix(), weights.gamma, weights.epsilon);
    let cw = weights.nu / (2.0 * weights.mu);
    let variance = 0.5 * (a.variance + b.variance);
    let covariance = a.covariance + b.covariance;
    let value = variance + cw * covariance;
    let g1 = a.grad_variance * 0.5 + a.grad_covariance * cw;
    let g2 = b.grad_variance * 0.5 + b.grad_covariance * cw;
    Ok(LossReport::new(
        value,
        &[("reg", value), ("variance", variance), ("covariance", covariance)],
        vec![g1, g2],
    ))
}

/// `λ ℓ_a + μ ℓ_r` for the chosen regularizer. For SFRIK, `ℓ_r` is the sum
/// of the two uniformity terms, which is [`total_loss`].
pub fn objective(
    regularizer: Regularizer,
    weights: &LossWeights,
    spec: &KernelSpec,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
) -> Result<LossReport> {
    match regularizer {
        Regularizer::Sfrik => total_loss(weights, spec, z1, z2),
        Regularizer::Simclr => {
            let align = alignment_loss(z1, z2)?;
            let r = simclr_regularizer(weights.tau, z1, z2)?;
            combine(weights, align, r.value, r.gradients, &[])
        }
        Regularizer::Auh => {
            let align = alignment_loss(z1, z2)?;
            let r = auh_regularizer(weights.t_scale, z1, z2)?;
            combine(weights, align, r.value, r.gradients, &[])
        }
        Regularizer::Vicreg => {
            let align = alignment_loss(z1, z2)?;
            let r = vicreg_regularizer(weights, z1, z2)?;
            let extra = [
                ("variance", r.terms["variance"]),
                ("covariance", r.terms["covariance"]),
            ];
            combine(weights, align, r.value, r.gradients, &extra)
        }
    }
}
