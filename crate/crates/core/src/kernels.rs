//! Rotation-invariant kernels `K(u, v) = φ(u·v)` on `S^{q-1}` and their
//! Legendre expansions `φ(t) = Σ_l b_l P_l(q; t)`.
//!
//! Three families are supported: finite truncations with user-supplied
//! weights, the RBF kernel `exp(-2σ(1 - t))` and the generalized distance
//! kernel `2V - (2 - 2t)^(s - (q-1)/2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{default_node_count, GaussJacobi};
use crate::sphere_math::{
    clamp_unit, harmonic_space_dim, ln_gamma, surface_area_ratio,
    LegendreTable,
};

/// Working truncation order for the infinite families.
pub const DEFAULT_WORKING_ORDER: usize = 40;

/// Coefficients at or below this are treated as zero for user-supplied
/// (truncated) weights.
pub const POSITIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Truncated,
    Rbf,
    #[serde(rename = "gendist")]
    GenDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Universality {
    UniversalUpToProbe,
    NotUniversal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernelSpec {
    q: usize,
    family: KernelFamily,
    #[serde(default)]
    coefficients: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
    #[serde(default)]
    centered: bool,
}

/// A validated rotation-invariant kernel.
///
/// Serializes as `{"q", "family", "coefficients": [[l, b_l], ...],
/// "sigma"?, "s"?, "centered"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKernelSpec", into = "RawKernelSpec")]
pub struct KernelSpec {
    q: usize,
    family: KernelFamily,
    coefficients: Vec<(usize, f64)>,
    sigma: Option<f64>,
    s: Option<f64>,
    centered: bool,
}

impl TryFrom<RawKernelSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawKernelSpec) -> Result<Self> {
        let spec = KernelSpec {
            q: raw.q,
            family: raw.family,
            coefficients: raw.coefficients,
            sigma: raw.sigma,
            s: raw.s,
            centered: raw.centered,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<KernelSpec> for RawKernelSpec {
    fn from(k: KernelSpec) -> Self {
        RawKernelSpec {
            q: k.q,
            family: k.family,
            coefficients: k.coefficients,
            sigma: k.sigma,
            s: k.s,
            centered: k.centered,
        }
    }
}

impl KernelSpec {
    /// Truncated kernel `Σ b_l P_l(q; ·)` from `(l, b_l)` pairs. Repeated
    /// orders are summed; the list is stored sorted by order.
    pub fn truncated(q: usize, coefficients: &[(usize, f64)]) -> Result<Self> {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        let mut sorted = coefficients.to_vec();
        sorted.sort_by_key(|c| c.0);
        for (l, b) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == l => last.1 += b,
                _ => merged.push((l, b)),
            }
        }
        let spec = KernelSpec {
            q,
            family: KernelFamily::Truncated,
            coefficients: merged,
            sigma: None,
            s: None,
            centered: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Truncation `b_1 P_1 + b_2 P_2 + b_3 P_3`, already centered.
    pub fn sfrik(q: usize, b1: f64, b2: f64, b3: f64) -> Result<Self> {
        let coeffs: Vec<(usize, f64)> = [(1, b1), (2, b2), (3, b3)]
            .into_iter()
            .filter(|&(_, b)| b != 0.0)
            .collect();
        Ok(Self::truncated(q, &coeffs)?.centered())
    }

    /// `exp(-σ ||u - v||^2) = exp(-2σ (1 - t))`.
    pub fn rbf(q: usize, sigma: f64) -> Result<Self> {
        let spec = KernelSpec {
            q,
            family: KernelFamily::Rbf,
            coefficients: Vec::new(),
            sigma: Some(sigma),
            s: None,
            centered: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Generalized distance kernel with `(q-1)/2 < s < (q+1)/2`.
    pub fn gendist(q: usize, s: f64) -> Result<Self> {
        let spec = KernelSpec {
            q,
            family: KernelFamily::GenDist,
            coefficients: Vec::new(),
            sigma: None,
            s: Some(s),
            centered: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.q < 3 {
            return Err(Error::InvalidKernel(format!("q = {} must be >= 3", self.q)));
        }
        match self.family {
            KernelFamily::Truncated => {
                if self.sigma.is_some() || self.s.is_some() {
                    return Err(Error::InvalidKernel(
                        "truncated kernels take no sigma or s".into(),
                    ));
                }
                for &(l, b) in &self.coefficients {
                    if !b.is_finite() || b < 0.0 {
                        return Err(Error::InvalidKernel(format!(
                            "coefficient b_{l} = {b} must be finite and >= 0"
                        )));
                    }
                    if self.centered && l == 0 && b != 0.0 {
                        return Err(Error::InvalidKernel(
                            "centered kernel carries a nonzero b_0".into(),
                        ));
                    }
                }
                if self.coefficients.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::InvalidKernel(
                        "coefficient orders must be strictly increasing".into(),
                    ));
                }
            }
            KernelFamily::Rbf => {
                let sigma = self.sigma.ok_or_else(|| {
                    Error::InvalidKernel("rbf kernel requires sigma".into())
                })?;
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidKernel(format!("sigma = {sigma} must be > 0")));
                }
                if self.s.is_some() || !self.coefficients.is_empty() {
                    return Err(Error::InvalidKernel(
                        "rbf kernel takes only sigma".into(),
                    ));
                }
            }
            KernelFamily::GenDist => {
                let s = self
                    .s
                    .ok_or_else(|| Error::InvalidKernel("gendist kernel requires s".into()))?;
                let lo = (self.q as f64 - 1.0) / 2.0;
                if !(s > lo && s < lo + 1.0) {
                    return Err(Error::InvalidKernel(format!(
                        "s = {s} must lie strictly inside ({lo}, {})",
                        lo + 1.0
                    )));
                }
                if self.sigma.is_some() || !self.coefficients.is_empty() {
                    return Err(Error::InvalidKernel(
                        "gendist kernel takes only s".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn s(&self) -> Option<f64> {
        self.s
    }

    /// Stored `(l, b_l)` pairs (truncated family only).
    pub fn coefficient_pairs(&self) -> &[(usize, f64)] {
        &self.coefficients
    }

    /// Highest order with a stored coefficient (truncated family only).
    pub fn truncation_order(&self) -> Option<usize> {
        match self.family {
            KernelFamily::Truncated => Some(self.coefficients.last().map_or(0, |c| c.0)),
            _ => None,
        }
    }

    /// Copy of this kernel with `b_0` removed.
    pub fn centered(&self) -> KernelSpec {
        let mut out = self.clone();
        out.coefficients.retain(|&(l, _)| l != 0);
        out.centered = true;
        out
    }

    /// `b_0` of the uncentered kernel.
    pub fn constant_term(&self) -> Result<f64> {
        match self.family {
            KernelFamily::Truncated => Ok(self
                .coefficients
                .iter()
                .find(|c| c.0 == 0)
                .map_or(0.0, |c| c.1)),
            KernelFamily::Rbf => Ok(rbf_coefficients(self.q, self.sigma.unwrap(), 0)?[0]),
            KernelFamily::GenDist => Ok(gendist_volume(self.q, self.s.unwrap())),
        }
    }

    /// `b_0 .. b_L` of this kernel (with `b_0 = 0` when centered).
    pub fn coefficients_up_to(&self, max_order: usize) -> Result<Vec<f64>> {
        let mut out = match self.family {
            KernelFamily::Truncated => {
                let mut v = vec![0.0; max_order + 1];
                for &(l, b) in &self.coefficients {
                    if l <= max_order {
                        v[l] = b;
                    }
                }
                v
            }
            KernelFamily::Rbf => rbf_coefficients(self.q, self.sigma.unwrap(), max_order)?,
            KernelFamily::GenDist => gendist_coefficients(self.q, self.s.unwrap(), max_order)?,
        };
        if self.centered {
            out[0] = 0.0;
        }
        Ok(out)
    }

    /// Precomputed evaluator for `φ` (or `φ̃` when centered).
    pub fn evaluator(&self) -> Result<KernelFn> {
        let offset = if self.centered && self.family != KernelFamily::Truncated {
            self.constant_term()?
        } else {
            0.0
        };
        let shape = match self.family {
            KernelFamily::Truncated => {
                let order = self.truncation_order().unwrap_or(0);
                let coeffs = self.coefficients_up_to(order)?;
                let qf = self.q as f64;
                let deriv_coeffs = (1..coeffs.len())
                    .map(|l| {
                        let lf = l as f64;
                        coeffs[l] * lf * (lf + qf - 2.0) / (qf - 1.0)
                    })
                    .collect();
                Shape::Poly {
                    table: LegendreTable::new(self.q, order)?,
                    deriv_table: LegendreTable::new(self.q + 2, order.max(1))?,
                    coeffs,
                    deriv_coeffs,
                }
            }
            KernelFamily::Rbf => Shape::Rbf {
                sigma: self.sigma.unwrap(),
            },
            KernelFamily::GenDist => {
                let s = self.s.unwrap();
                Shape::GenDist {
                    constant: 2.0 * gendist_volume(self.q, s),
                    exponent: gendist_exponent(self.q, s),
                }
            }
        };
        Ok(KernelFn {
            q: self.q,
            shape,
            offset,
        })
    }

    /// `φ(t)`, or `φ̃(t)` when centered.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let t = clamp_unit(t)?;
        Ok(self.evaluator()?.value(t))
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Poly {
        table: LegendreTable,
        deriv_table: LegendreTable,
        coeffs: Vec<f64>,
        // P_l'(q; t) = l (l + q - 2) / (q - 1) P_{l-1}(q + 2; t)
        deriv_coeffs: Vec<f64>,
    },
    Rbf {
        sigma: f64,
    },
    GenDist {
        constant: f64,
        exponent: f64,
    },
}

/// Evaluator built once per kernel; no domain checks on `t`.
#[derive(Debug, Clone)]
pub struct KernelFn {
    q: usize,
    shape: Shape,
    offset: f64,
}

impl KernelFn {
    pub fn q(&self) -> usize {
        self.q
    }

    /// Subtracted constant (`b_0` for centered infinite families).
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn value(&self, t: f64) -> f64 {
        let raw = match &self.shape {
            Shape::Poly { table, coeffs, .. } => table.series(t, coeffs),
            Shape::Rbf { sigma } => (-2.0 * sigma * (1.0 - t)).exp(),
            Shape::GenDist { constant, exponent } => {
                constant - (2.0 - 2.0 * t).max(0.0).powf(*exponent)
            }
        };
        raw - self.offset
    }

    /// `dφ/dt`. Infinite at `t = 1` for the generalized distance kernel.
    pub fn derivative(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Poly {
                deriv_table,
                deriv_coeffs,
                ..
            } => deriv_table.series(t, deriv_coeffs),
            Shape::Rbf { sigma } => 2.0 * sigma * (-2.0 * sigma * (1.0 - t)).exp(),
            Shape::GenDist { exponent, .. } => {
                2.0 * exponent * (2.0 - 2.0 * t).max(0.0).powf(exponent - 1.0)
            }
        }
    }

    /// For the generalized distance kernel, `(C, p)` such that
    /// `φ = C - r^(2p)` with `r = ||u - v||`.
    pub fn distance_form(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::GenDist { constant, exponent } => Some((constant - self.offset, exponent)),
            _ => None,
        }
    }

    /// Coefficients when this is a truncation (`b_0 .. b_L`).
    pub fn polynomial_coefficients(&self) -> Option<&[f64]> {
        match &self.shape {
            Shape::Poly { coeffs, .. } => Some(coeffs),
            _ => None,
        }
    }
}

/// `φ(t)` for a validated spec.
pub fn kernel_eval(spec: &KernelSpec, t: f64) -> Result<f64> {
    spec.eval(t)
}

/// Removes `b_0`. Idempotent.
pub fn center_kernel(spec: &KernelSpec) -> KernelSpec {
    spec.centered()
}

/// `V_{q-1-2s}(S^{q-1})`: mean of `||u - v||^(2s-q+1)` over pairs of
/// independent uniform points.
pub fn gendist_volume(q: usize, s: f64) -> f64 {
    let qf = q as f64;
    ((2.0 * s - 1.0) * std::f64::consts::LN_2 + ln_gamma(qf / 2.0) + ln_gamma(s)
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma((qf - 1.0) / 2.0 + s))
        .exp()
}

/// Exponent `p = s - (q-1)/2` on `(2 - 2t)`, in `(0, 1)`.
pub fn gendist_exponent(q: usize, s: f64) -> f64 {
    s - (q as f64 - 1.0) / 2.0
}

fn check_gendist(q: usize, s: f64) -> Result<()> {
    KernelSpec::gendist(q, s).map(|_| ())
}

/// Closed-form Legendre coefficients of the generalized distance kernel:
/// `b_0 = V`, `b_l = α_l N(q, l)` with
/// `α_l = -V ((q-1)/2 - s)_l / ((q-1)/2 + s)_l`.
pub fn gendist_coefficients(q: usize, s: f64, max_order: usize) -> Result<Vec<f64>> {
    Ok(gendist_alphas(q, s, max_order)?
        .into_iter()
        .enumerate()
        .map(|(l, a)| {
            if l == 0 {
                a
            } else {
                a * harmonic_space_dim(q, l).unwrap()
            }
        })
        .collect())
}

/// `α_0 = V` followed by `α_1 .. α_L`. The Pochhammer ratio is built up
/// factor by factor so its sign is tracked exactly.
pub fn gendist_alphas(q: usize, s: f64, max_order: usize) -> Result<Vec<f64>> {
    check_gendist(q, s)?;
    let v = gendist_volume(q, s);
    let half = (q as f64 - 1.0) / 2.0;
    let (lo, hi) = (half - s, half + s);
    let mut out = Vec::with_capacity(max_order + 1);
    out.push(v);
    let mut ratio = 1.0;
    for l in 1..=max_order {
        let j = (l - 1) as f64;
        ratio *= (lo + j) / (hi + j);
        out.push(-v * ratio);
    }
    Ok(out)
}

/// Limit of `α_l · l^(2s)` as `l → ∞`:
/// `2^(2s-1) Γ(q/2) Γ(s) / (√π |Γ((q-1)/2 - s)|)`.
pub fn gendist_alpha_asymptote(q: usize, s: f64) -> Result<f64> {
    check_gendist(q, s)?;
    let qf = q as f64;
    // lgamma returns log|Γ| for the negative argument
    Ok(((2.0 * s - 1.0) * std::f64::consts::LN_2 + ln_gamma(qf / 2.0) + ln_gamma(s)
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma((qf - 1.0) / 2.0 - s))
        .exp())
}

/// Upper bound on the RBF coefficient `b_l`:
/// `2 N(q,l) (|S^{q-2}|/|S^{q-1}|) Γ((q-1)/2) / (2^l Γ(l + (q-1)/2)) (2σ)^l`.
pub fn rbf_coefficient_bound(q: usize, sigma: f64, l: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be > 0")));
    }
    let a = (q as f64 - 1.0) / 2.0;
    let lf = l as f64;
    let log = std::f64::consts::LN_2 + harmonic_space_dim(q, l)?.ln()
        - surface_area_ratio(q)?.ln()
        + ln_gamma(a)
        - ln_gamma(lf + a)
        + lf * sigma.ln();
    Ok(log.exp())
}

/// RBF coefficients through the Rodrigues representation
/// `b_l = N (|S^{q-2}|/|S^{q-1}|) Γ((q-1)/2) / (2^l Γ(l+(q-1)/2))
///        ∫ φ^(l)(t) (1-t²)^(l+(q-3)/2) dt`,
/// whose integrand is positive, so every `b_l` keeps full relative
/// precision however small it is.
pub fn rbf_coefficients(q: usize, sigma: f64, max_order: usize) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma = {sigma} must be > 0")));
    }
    let a = (q as f64 - 1.0) / 2.0;
    let log_ratio = surface_area_ratio(q)?.ln();
    let nodes = 48 + (4.0 * sigma).ceil() as usize;
    (0..=max_order)
        .map(|l| {
            let lf = l as f64;
            let expo = lf + a - 1.0;
            let rule = GaussJacobi::new(nodes, expo, expo)?;
            // ∫ e^{2σ(t-1)} (1-t²)^{l+(q-3)/2} dt
            let integral = rule.integrate(|t| (2.0 * sigma * (t - 1.0)).exp());
            let log = harmonic_space_dim(q, l)?.ln() - log_ratio + ln_gamma(a) - ln_gamma(lf + a)
                - lf * std::f64::consts::LN_2
                + lf * (2.0 * sigma).ln()
                + integral.ln();
            Ok(log.exp())
        })
        .collect()
}

/// Result of projecting a function onto the Legendre basis.
#[derive(Debug, Clone, Serialize)]
pub struct Expansion {
    pub coefficients: Vec<f64>,
    pub nodes: usize,
    /// Largest change of any coefficient when the node count is doubled.
    pub max_change_on_refinement: f64,
}

impl Expansion {
    /// True when doubling the node count moved a coefficient by more than
    /// `1e-8`.
    pub fn quadrature_insufficient(&self) -> bool {
        self.max_change_on_refinement > 1e-8
    }
}

fn project(
    rule: &GaussJacobi,
    q: usize,
    max_order: usize,
    mut f: impl FnMut(f64) -> f64,
) -> Result<Vec<f64>> {
    let table = LegendreTable::new(q, max_order)?;
    let norm = surface_area_ratio(q)?;
    let mut acc = vec![0.0; max_order + 1];
    let mut p = vec![0.0; max_order + 1];
    for (&x, &w) in rule.nodes().iter().zip(rule.weights()) {
        let fx = f(x);
        table.fill_unchecked(x, &mut p);
        for (a, pl) in acc.iter_mut().zip(&p) {
            *a += w * fx * pl;
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(l, a)| harmonic_space_dim(q, l).unwrap() * a / norm)
        .collect())
}

/// `b_l = N(q,l) (|S^{q-2}|/|S^{q-1}|) ∫ φ P_l (1-t²)^((q-3)/2) dt` for
/// `l = 0..=L` by Gauss–Jacobi quadrature with `max(200, 4L + 20)` nodes.
pub fn expand_coefficients(
    phi: impl Fn(f64) -> f64,
    q: usize,
    max_order: usize,
) -> Result<Expansion> {
    expand_coefficients_with_nodes(phi, q, max_order, default_node_count(max_order))
}

pub fn expand_coefficients_with_nodes(
    phi: impl Fn(f64) -> f64,
    q: usize,
    max_order: usize,
    nodes: usize,
) -> Result<Expansion> {
    let coarse = project(&GaussJacobi::for_dimension(q, nodes)?, q, max_order, &phi)?;
    let fine = project(&GaussJacobi::for_dimension(q, 2 * nodes)?, q, max_order, &phi)?;
    let change = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Expansion {
        coefficients: coarse,
        nodes,
        max_change_on_refinement: change,
    })
}

/// Projection of `φ(t) = g(t) (1 - t)^γ` where `g` is smooth: the endpoint
/// factor is folded into the Jacobi weight so the rule stays spectrally
/// accurate.
pub fn expand_with_endpoint_factor(
    smooth: impl Fn(f64) -> f64,
    endpoint_exponent: f64,
    q: usize,
    max_order: usize,
    nodes: usize,
) -> Result<Vec<f64>> {
    let a = (q as f64 - 3.0) / 2.0;
    let rule = GaussJacobi::new(nodes, a + endpoint_exponent, a)?;
    project(&rule, q, max_order, smooth)
}

/// Generalized distance coefficients by quadrature, independent of the
/// Pochhammer closed form: `φ = 2V - 2^p (1 - t)^p`.
pub fn gendist_coefficients_quadrature(q: usize, s: f64, max_order: usize) -> Result<Vec<f64>> {
    check_gendist(q, s)?;
    let v = gendist_volume(q, s);
    let p = gendist_exponent(q, s);
    let nodes = default_node_count(max_order);
    let mut out = expand_with_endpoint_factor(|_| -(2f64.powf(p)), p, q, max_order, nodes)?;
    out[0] += 2.0 * v;
    Ok(out)
}

/// Universality probe: truncations never are; RBF and generalized distance
/// kernels are when every `b_l`, `l <= probe_order`, is strictly positive
/// (`b_0` skipped when centered).
pub fn is_universal(spec: &KernelSpec, probe_order: usize) -> Result<Universality> {
    let first = usize::from(spec.is_centered());
    let coeffs = match spec.family() {
        KernelFamily::Truncated => return Ok(Universality::NotUniversal),
        _ => spec.coefficients_up_to(probe_order)?,
    };
    if coeffs[first..].iter().all(|&b| b > 0.0) {
        Ok(Universality::UniversalUpToProbe)
    } else {
        Ok(Universality::NotUniversal)
    }
}

/// Coefficient listing used by reports: user weights for truncations,
/// otherwise the family's own coefficients up to `max_order`.
pub fn expand_kernel(spec: &KernelSpec, max_order: usize) -> Result<Vec<f64>> {
    spec.coefficients_up_to(max_order)
}
