//! Self-checks behind `sphmmd verify`. Every check reports the measured
//! quantity next to the tolerance it is compared with.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::harmonics::{embedding_moment_stats, HarmonicBasis};
use crate::kernels::{
    expand_coefficients, gendist_coefficients, gendist_coefficients_quadrature, is_universal,
    rbf_coefficient_bound, rbf_coefficients, KernelSpec, Universality,
};
use crate::losses::{
    alignment_loss, auh_regularizer, simclr_regularizer, total_loss, uniformity_loss,
    uniformity_loss_generic, vicreg_regularizer, LossReport, LossWeights, Regularizer,
};
use crate::optimizer::{generate_two_view_data, minimize, GeneratorParams, Layout, OptimConfig};
use crate::presets::find_preset;
use crate::quadrature::GaussJacobi;
use crate::sampling::{
    mmd_two_sample, mmd_two_sample_se, sample_uniform_sphere, uniform_mean_embedding_mc, SampleSet,
};
use crate::sphere_math::{
    harmonic_space_dim, legendre_closed_form, legendre_derivative, legendre_weight_norm,
    sphere_surface_area, LegendreTable,
};

pub const SUITES: &[&str] = &[
    "legendre",
    "orthogonality",
    "addition",
    "coefficients",
    "kernels-psd",
    "lemma2",
    "feature-map",
    "losses",
    "gradients",
    "sampling",
    "optimizer",
    "io",
];

/// Below this magnitude `P_l(q; t)` is within rounding of a root and is
/// compared in absolute terms.
pub const LEGENDRE_ROOT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::with(name, measured, tolerance, measured <= tolerance)
    }

    /// Passes when `measured >= tolerance`.
    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::with(name, measured, tolerance, measured >= tolerance)
    }

    /// Passes when `measured > tolerance`.
    pub fn above(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self::with(name, measured, tolerance, measured > tolerance)
    }

    fn with(name: impl Into<String>, measured: f64, tolerance: f64, ok: bool) -> Self {
        Self {
            name: name.into(),
            status: if ok && measured.is_finite() {
                Status::Pass
            } else {
                Status::Fail
            },
            measured,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Check>> {
    match name {
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            Ok(out)
        }
        "legendre" => legendre_suite(),
        "orthogonality" => orthogonality_suite(),
        "addition" => addition_suite(seed),
        "coefficients" => coefficient_suite(),
        "kernels-psd" => psd_suite(seed),
        "lemma2" => lemma2_suite(seed),
        "feature-map" => feature_map_suite(seed),
        "losses" => loss_invariant_suite(seed),
        "gradients" => gradient_suite(seed),
        "sampling" => sampling_suite(seed),
        "optimizer" => optimizer_suite(seed),
        "io" => io_suite(seed),
        other => Err(Error::Config(format!(
            "unknown suite {other:?}; expected one of {} or all",
            SUITES.join(", ")
        ))),
    }
}

fn rng_for(seed: u64, salt: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn gaussian_matrix(rng: &mut ChaCha20Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| rng.sample(StandardNormal))
}

fn unit_rows(rng: &mut ChaCha20Rng, n: usize, q: usize) -> DMatrix<f64> {
    let mut m = gaussian_matrix(rng, n, q);
    for mut row in m.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    m
}

/// Haar-random orthogonal matrix.
pub fn random_rotation(rng: &mut ChaCha20Rng, q: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, q, q).qr();
    let (qm, r) = (qr.q(), qr.r());
    let mut out = qm;
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

/// Worst relative error of the recurrence against the closed form for
/// `|P| >= LEGENDRE_ROOT_FLOOR`, and worst absolute error below it.
pub fn legendre_consistency(qs: impl Iterator<Item = usize>, max_order: usize, grid: usize) -> Result<(f64, f64)> {
    let mut rel: f64 = 0.0;
    let mut abs_near_roots: f64 = 0.0;
    for q in qs {
        let table = LegendreTable::new(q, max_order)?;
        for k in 0..grid {
            let t = -1.0 + 2.0 * k as f64 / (grid - 1) as f64;
            let rec = table.evaluate(t)?;
            for (l, r) in rec.iter().enumerate() {
                let exact = legendre_closed_form(q, l, t)?;
                let err = (r - exact).abs();
                if exact.abs() >= LEGENDRE_ROOT_FLOOR {
                    rel = rel.max(err / exact.abs());
                } else {
                    abs_near_roots = abs_near_roots.max(err);
                }
            }
        }
    }
    Ok((rel, abs_near_roots))
}

fn legendre_suite() -> Result<Vec<Check>> {
    let (rel, abs) = legendre_consistency(3..=64, 30, 1001)?;
    let mut deriv: f64 = 0.0;
    let h = 1e-6;
    for q in [3, 6, 11, 40] {
        for l in 0..=12 {
            for k in 0..37 {
                let t = -0.9 + 1.8 * k as f64 / 36.0;
                let fd = (legendre_closed_form(q, l, t + h)? - legendre_closed_form(q, l, t - h)?)
                    / (2.0 * h);
                let d = legendre_derivative(q, l, t)?;
                deriv = deriv.max((fd - d).abs() / d.abs().max(1.0));
            }
        }
    }
    let mut endpoint: f64 = 0.0;
    let mut bound: f64 = 0.0;
    for q in 3..=64 {
        let table = LegendreTable::new(q, 30)?;
        let top = table.evaluate(1.0)?;
        let bottom = table.evaluate(-1.0)?;
        for l in 0..=20 {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            endpoint = endpoint.max((top[l] - 1.0).abs()).max((bottom[l] - sign).abs());
        }
        for k in 0..1001 {
            let t = -1.0 + 2.0 * k as f64 / 1000.0;
            bound = table.evaluate(t)?.iter().fold(bound, |m, v| m.max(v.abs()));
        }
    }
    Ok(vec![
        Check::at_most("legendre.recurrence_vs_closed_form.relative", rel, 1e-10),
        Check::at_most("legendre.recurrence_vs_closed_form.absolute_near_roots", abs, 1e-14),
        Check::at_most("legendre.derivative_vs_finite_difference", deriv, 1e-5),
        Check::at_most("legendre.endpoint_values", endpoint, 1e-12),
        Check::at_most("legendre.sup_norm", bound, 1.0 + 1e-12),
    ])
}

/// `(max off-diagonal |∫P_n P_m w|, max diagonal relative error)` for
/// `n, m <= max_order` using `nodes` Gauss–Jacobi nodes.
pub fn orthogonality_errors(q: usize, max_order: usize, nodes: usize) -> Result<(f64, f64)> {
    let rule = GaussJacobi::for_dimension(q, nodes)?;
    let table = LegendreTable::new(q, max_order)?;
    let values: Vec<Vec<f64>> = rule
        .nodes()
        .iter()
        .map(|&x| table.evaluate(x))
        .collect::<Result<_>>()?;
    let (mut off, mut diag): (f64, f64) = (0.0, 0.0);
    for n in 0..=max_order {
        for m in 0..=max_order {
            let integral: f64 = rule
                .weights()
                .iter()
                .zip(&values)
                .map(|(w, p)| w * p[n] * p[m])
                .sum();
            if n == m {
                let expected = legendre_weight_norm(q, n)?;
                diag = diag.max((integral - expected).abs() / expected);
            } else {
                off = off.max(integral.abs());
            }
        }
    }
    Ok((off, diag))
}

fn orthogonality_suite() -> Result<Vec<Check>> {
    let (mut off, mut diag): (f64, f64) = (0.0, 0.0);
    for q in 3..=16 {
        let (o, d) = orthogonality_errors(q, 10, 200)?;
        off = off.max(o);
        diag = diag.max(d);
    }
    Ok(vec![
        Check::at_most("orthogonality.off_diagonal", off, 1e-9),
        Check::at_most("orthogonality.diagonal_relative", diag, 1e-9),
    ])
}

/// Largest `|Σ_k Y_k(u) Y_k(v) - N(q,l)/|S^{q-1}| P_l(q; u·v)|` over
/// `pairs` random pairs.
pub fn addition_residual(q: usize, order: usize, pairs: usize, rng: &mut ChaCha20Rng) -> Result<f64> {
    let basis = HarmonicBasis::build(q, 1.0, 1.0)?;
    let scale = harmonic_space_dim(q, order)? / sphere_surface_area(q)?;
    let table = LegendreTable::new(q, order)?;
    let u = unit_rows(rng, pairs, q);
    let v = unit_rows(rng, pairs, q);
    let mut worst: f64 = 0.0;
    for i in 0..pairs {
        let ui: Vec<f64> = u.row(i).iter().copied().collect();
        let vi: Vec<f64> = v.row(i).iter().copied().collect();
        let lhs = basis.harmonics(order, &ui)?.dot(&basis.harmonics(order, &vi)?);
        let t: f64 = ui.iter().zip(&vi).map(|(a, b)| a * b).sum();
        let rhs = scale * table.value(order, t)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

fn addition_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_for(seed, 3);
    let mut worst: f64 = 0.0;
    for q in 3..=12 {
        for order in [1, 2] {
            worst = worst.max(addition_residual(q, order, 1000, &mut rng)?);
        }
    }
    let mut ortho: f64 = 0.0;
    for q in 3..=12 {
        let basis = HarmonicBasis::build(q, 1.0, 1.0)?;
        for order in [1, 2] {
            let g = basis.orthonormality_gram(order)?;
            let eye = DMatrix::identity(g.nrows(), g.ncols());
            let dev = (g - eye).amax();
            ortho = ortho.max(dev);
        }
    }
    Ok(vec![
        Check::at_most("addition.residual", worst, 1e-8),
        Check::at_most("addition.orthonormal_basis", ortho, 1e-10),
    ])
}

fn coefficient_suite() -> Result<Vec<Check>> {
    let mut gd: f64 = 0.0;
    for s in [1.2, 1.5, 1.8] {
        let closed = gendist_coefficients(3, s, 10)?;
        let quad = gendist_coefficients_quadrature(3, s, 10)?;
        for (a, b) in closed.iter().zip(&quad) {
            gd = gd.max((a - b).abs());
        }
    }
    let b0 = gendist_coefficients(3, 1.5, 0)?[0];
    let mut min_b = f64::INFINITY;
    let mut ratio: f64 = 0.0;
    for q in [3, 8, 16] {
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            let b = rbf_coefficients(q, sigma, 20)?;
            for (l, bl) in b.iter().enumerate() {
                min_b = min_b.min(*bl);
                ratio = ratio.max(bl / rbf_coefficient_bound(q, sigma, l)?);
            }
        }
    }
    Ok(vec![
        Check::at_most("coefficients.gendist_closed_vs_quadrature", gd, 1e-8),
        Check::at_most("coefficients.gendist_volume_q3", (b0 - 4.0 / 3.0).abs(), 1e-12),
        Check::above("coefficients.rbf_min_coefficient", min_b, 0.0),
        Check::at_most("coefficients.rbf_over_bound", ratio, 1.0),
    ])
}

fn min_gram_eigenvalue(spec: &KernelSpec, points: &DMatrix<f64>) -> Result<f64> {
    let f = spec.evaluator()?;
    let g = points * points.transpose();
    Ok(g.map(|t| f.value(t.clamp(-1.0, 1.0))).symmetric_eigenvalues().min())
}

/// Sup over a 1001-point grid of `|φ(t) - Σ_{l<=order} b_l P_l(q; t)|`,
/// for every `order` in `0..=max_order`.
pub fn reconstruction_errors(spec: &KernelSpec, max_order: usize) -> Result<Vec<f64>> {
    let b = spec.coefficients_up_to(max_order)?;
    let table = LegendreTable::new(spec.q(), max_order)?;
    let mut sup = vec![0.0f64; max_order + 1];
    for k in 0..1001 {
        let t = -1.0 + 2.0 * k as f64 / 1000.0;
        let exact = spec.eval(t)?;
        let p = table.evaluate(t)?;
        let mut partial = 0.0;
        for l in 0..=max_order {
            partial += b[l] * p[l];
            sup[l] = sup[l].max((exact - partial).abs());
        }
    }
    Ok(sup)
}

fn psd_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_for(seed, 5);
    let mut worst = f64::INFINITY;
    for q in [3, 8, 16] {
        let pts = unit_rows(&mut rng, 64, q);
        let half = (q as f64 - 1.0) / 2.0;
        let specs = [
            KernelSpec::rbf(q, 1.0)?,
            KernelSpec::rbf(q, 5.0)?,
            KernelSpec::gendist(q, half + 0.25)?,
            KernelSpec::gendist(q, half + 0.75)?,
            KernelSpec::truncated(q, &[(1, 1.0), (2, 40.0), (3, 40.0)])?,
            KernelSpec::sfrik(q, 1.0, 20.0, 0.0)?,
        ];
        for spec in &specs {
            worst = worst.min(min_gram_eigenvalue(spec, &pts)?);
        }
    }

    let (mut rbf_err, mut gd_err, mut gd_rate_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut rise: f64 = f64::NEG_INFINITY;
    for q in 3..=8 {
        let half = (q as f64 - 1.0) / 2.0;
        let mut specs = vec![(KernelSpec::rbf(q, 1.0)?, false), (KernelSpec::rbf(q, 2.0)?, false)];
        for p in [0.25, 0.5, 0.75] {
            specs.push((KernelSpec::gendist(q, half + p)?, true));
        }
        for (spec, is_gendist) in &specs {
            let p = spec.s().map(|s| s - half).unwrap_or(0.0);
            let sup = reconstruction_errors(spec, if *is_gendist { 80 } else { 40 })?;
            for w in sup[10..=40].windows(2) {
                rise = rise.max(w[1] - w[0]);
            }
            if *is_gendist {
                gd_err = gd_err.max(sup[40]);
                // b_l ~ l^(-1-2p), so the truncation error decays like L^(-2p).
                let rate = (sup[40] / sup[80]).log2();
                gd_rate_gap = gd_rate_gap.max((rate - 2.0 * p).abs());
            } else {
                rbf_err = rbf_err.max(sup[40]);
            }
        }
    }

    let mut identity: f64 = 0.0;
    for q in [3, 8, 64] {
        let spec = KernelSpec::truncated(q, &[(0, 0.5), (1, 1.0), (2, 40.0), (3, 40.0), (5, 2.0)])?;
        let f = spec.evaluator()?;
        let got = expand_coefficients(|t| f.value(t), q, 6)?.coefficients;
        let want = spec.coefficients_up_to(6)?;
        for (a, b) in got.iter().zip(&want) {
            identity = identity.max((a - b).abs());
        }
    }

    let rbf = is_universal(&KernelSpec::rbf(5, 1.0)?, 30)? == Universality::UniversalUpToProbe;
    let trunc = is_universal(&KernelSpec::sfrik(5, 1.0, 1.0, 0.0)?, 30)? == Universality::NotUniversal;
    Ok(vec![
        Check::at_least("kernels-psd.min_gram_eigenvalue", worst, -1e-8),
        Check::at_most("kernels-psd.rbf_reconstruction_order40", rbf_err, 1e-4),
        Check::at_most("kernels-psd.gendist_reconstruction_order40", gd_err, 1e-4),
        Check::at_most("kernels-psd.gendist_truncation_decay_rate", gd_rate_gap, 0.1),
        Check::at_most("kernels-psd.reconstruction_monotone_beyond_10", rise, 1e-12),
        Check::at_most("kernels-psd.expand_truncated_identity", identity, 1e-9),
        Check::at_least("kernels-psd.universality_labels", f64::from(u8::from(rbf && trunc)), 1.0),
    ])
}

/// Largest `|estimate - b_0| / SE` over kernels, probe directions and
/// dimensions.
pub fn lemma2_worst_z(qs: &[usize], directions: usize, n: usize, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, 7);
    let mut worst: f64 = 0.0;
    let mut stream = 0u64;
    for &q in qs {
        let specs = [
            KernelSpec::truncated(q, &[(0, 2.0), (1, 5.0), (2, 3.0)])?,
            KernelSpec::rbf(q, 1.0)?,
            KernelSpec::gendist(q, (q as f64 - 1.0) / 2.0 + 0.5)?,
        ];
        for spec in &specs {
            let b0 = spec.constant_term()?;
            for _ in 0..directions {
                let v: Vec<f64> = unit_rows(&mut rng, 1, q).iter().copied().collect();
                stream += 1;
                let est = uniform_mean_embedding_mc(spec, &v, n, seed.wrapping_add(stream))?;
                worst = worst.max((est.estimate - b0).abs() / est.std_error);
            }
        }
    }
    Ok(worst)
}

fn lemma2_suite(seed: u64) -> Result<Vec<Check>> {
    let z = lemma2_worst_z(&[3, 8, 32], 5, 100_000, seed)?;
    Ok(vec![Check::at_most("lemma2.max_standard_errors", z, 3.0)])
}

/// Largest `|Gram path - moment path| / max(1, value)` over random batches.
pub fn feature_map_worst(seed: u64, batches: usize) -> Result<f64> {
    let mut rng = rng_for(seed, 11);
    let qs = [3, 8, 16];
    let mut worst: f64 = 0.0;
    for b in 0..batches {
        let q = qs[b % qs.len()];
        let n = rng.random_range(1..=256);
        let b1 = 50.0 * (1.0 - rng.random::<f64>());
        let b2 = 50.0 * (1.0 - rng.random::<f64>());
        let z = EmbeddingBatch::new(unit_rows(&mut rng, n, q))?;
        let spec = KernelSpec::sfrik(q, b1, b2, 0.0)?;
        let gram = uniformity_loss(&spec, &z)?.value;
        let moments = HarmonicBasis::build(q, b1, b2)?.mmd_via_moments(&z)?;
        worst = worst.max((gram - moments).abs() / gram.abs().max(1.0));
    }
    Ok(worst)
}

fn feature_map_suite(seed: u64) -> Result<Vec<Check>> {
    let (mut upper, mut min_diag): (f64, f64) = (0.0, f64::INFINITY);
    let mut zero_stats: f64 = 0.0;
    let mut zero_value: f64 = 0.0;
    for q in [3, 8, 16] {
        let basis = HarmonicBasis::build(q, 1.0, 3.0)?;
        for order in [1, 2] {
            let m = basis.change_of_basis(order)?;
            for i in 0..m.nrows() {
                min_diag = min_diag.min(m[(i, i)]);
                for j in i + 1..m.ncols() {
                    upper = upper.max(m[(i, j)].abs());
                }
            }
        }
        // ±e_j has zero mean and isotropic second moment.
        let mut pts = DMatrix::zeros(2 * q, q);
        for j in 0..q {
            pts[(2 * j, j)] = 1.0;
            pts[(2 * j + 1, j)] = -1.0;
        }
        let batch = EmbeddingBatch::new(pts)?;
        zero_value = zero_value.max(uniformity_loss(&KernelSpec::sfrik(q, 1.0, 3.0, 0.0)?, &batch)?.value.abs());
        let stats = embedding_moment_stats(&batch);
        zero_stats = zero_stats.max(stats.mean_norm).max(stats.autocorr_deviation);
    }
    Ok(vec![
        Check::at_most("feature-map.gram_vs_moments", feature_map_worst(seed, 50)?, 1e-8),
        Check::at_most("feature-map.change_of_basis_upper_part", upper, 0.0),
        Check::above("feature-map.change_of_basis_min_diagonal", min_diag, 0.0),
        Check::at_most("feature-map.zero_estimator_value", zero_value, 1e-12),
        Check::at_most("feature-map.zero_estimator_moments", zero_stats, 1e-6),
    ])
}

fn io_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_for(seed, 23);
    let mut m = gaussian_matrix(&mut rng, 20, 7);
    m[(0, 0)] = f64::MIN_POSITIVE;
    m[(0, 1)] = -1.0 / 3.0;
    m[(0, 2)] = 1e300;
    let back = crate::io::matrix_from_csv(&crate::io::matrix_to_csv(&m))?;
    let exact = back.shape() == m.shape()
        && back.iter().zip(m.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(vec![Check::at_least("io.csv_round_trip_bit_exact", f64::from(u8::from(exact)), 1.0)])
}

fn loss_invariant_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = rng_for(seed, 13);
    let mut rot: f64 = 0.0;
    let mut fast: f64 = 0.0;
    let mut min_unif = f64::INFINITY;
    let w = LossWeights::default();
    for trial in 0..20 {
        let q = 3 + trial % 6;
        let n = 2 + trial;
        let z1 = EmbeddingBatch::new(unit_rows(&mut rng, n, q))?;
        let z2 = EmbeddingBatch::new(unit_rows(&mut rng, n, q))?;
        let r = random_rotation(&mut rng, q);
        let (r1, r2) = (z1.rotated(&r)?, z2.rotated(&r)?);
        let spec = KernelSpec::sfrik(q, 1.0, 20.0, 5.0)?;
        let pairs: [(f64, f64); 4] = [
            (alignment_loss(&z1, &z2)?.value, alignment_loss(&r1, &r2)?.value),
            (uniformity_loss(&spec, &z1)?.value, uniformity_loss(&spec, &r1)?.value),
            (
                simclr_regularizer(w.tau, &z1, &z2)?.value,
                simclr_regularizer(w.tau, &r1, &r2)?.value,
            ),
            (
                auh_regularizer(w.t_scale, &z1, &z2)?.value,
                auh_regularizer(w.t_scale, &r1, &r2)?.value,
            ),
        ];
        for (a, b) in pairs {
            rot = rot.max((a - b).abs());
        }
        let generic = uniformity_loss_generic(&spec, &z1)?.value;
        fast = fast.max((uniformity_loss(&spec, &z1)?.value - generic).abs());
        for pd in [
            spec.clone(),
            KernelSpec::rbf(q, 2.0)?.centered(),
            KernelSpec::gendist(q, (q as f64 - 1.0) / 2.0 + 0.3)?.centered(),
        ] {
            min_unif = min_unif.min(uniformity_loss(&pd, &z1)?.value);
        }
    }
    Ok(vec![
        Check::at_most("losses.rotation_invariance", rot, 1e-10),
        Check::at_most("losses.fast_path_vs_generic", fast, 1e-12),
        Check::at_least("losses.uniformity_nonnegative", min_unif, -1e-12),
    ])
}

/// Relative error `||g_fd - g|| / ||g||` of an analytic gradient against
/// central differences of step `h` in every coordinate of every input.
pub fn finite_difference_error<F>(inputs: &[DMatrix<f64>], h: f64, f: F) -> Result<f64>
where
    F: Fn(&[DMatrix<f64>]) -> Result<LossReport>,
{
    let base = f(inputs)?;
    let mut diff_sq = 0.0;
    let mut norm_sq = 0.0;
    let mut work = inputs.to_vec();
    for (b, g) in base.gradients.iter().enumerate() {
        for idx in 0..g.len() {
            let orig = work[b][idx];
            work[b][idx] = orig + h;
            let plus = f(&work)?.value;
            work[b][idx] = orig - h;
            let minus = f(&work)?.value;
            work[b][idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            diff_sq += (fd - g[idx]).powi(2);
            norm_sq += g[idx].powi(2);
        }
    }
    Ok(diff_sq.sqrt() / norm_sq.sqrt().max(1e-300))
}

fn free(m: &DMatrix<f64>) -> Result<EmbeddingBatch> {
    EmbeddingBatch::unnormalized(m.clone())
}

/// Whether some coordinate's standard deviation sits within `margin` of
/// `γ`, where the VICReg hinge is not differentiable.
pub fn near_vicreg_kink(z: &DMatrix<f64>, w: &LossWeights, margin: f64) -> bool {
    let n = z.nrows() as f64;
    let mean = z.row_mean();
    (0..z.ncols()).any(|j| {
        let var = z.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
        ((var + w.epsilon).sqrt() - w.gamma).abs() < margin
    })
}

/// Worst finite-difference error per loss over `batches` random batches of
/// `n` points in dimension `q`.
pub fn gradient_errors(seed: u64, batches: usize, n: usize, q: usize) -> Result<Vec<(String, f64)>> {
    let mut rng = rng_for(seed, 17);
    let h = 1e-5;
    let w = LossWeights {
        lambda: 1.3,
        ..LossWeights::default()
    };
    let sfrik = KernelSpec::sfrik(q, 1.0, 4.0, 2.0)?;
    let high = KernelSpec::truncated(q, &[(1, 1.0), (2, 0.5), (4, 0.7), (6, 0.2)])?.centered();
    let rbf = KernelSpec::rbf(q, 1.5)?.centered();
    let gendist = KernelSpec::gendist(q, (q as f64 - 1.0) / 2.0 + 0.5)?.centered();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(k, _)| k == name) {
        Some(entry) => entry.1 = entry.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for _ in 0..batches {
        let z1 = unit_rows(&mut rng, n, q);
        let z2 = unit_rows(&mut rng, n, q);
        let pair = [z1.clone(), z2.clone()];
        let single = [z1.clone()];
        record(
            "alignment",
            finite_difference_error(&pair, h, |x| alignment_loss(&free(&x[0])?, &free(&x[1])?))?,
        );
        for (name, spec) in [
            ("uniformity_sfrik", &sfrik),
            ("uniformity_order6", &high),
            ("uniformity_rbf", &rbf),
            ("uniformity_gendist", &gendist),
        ] {
            record(
                name,
                finite_difference_error(&single, h, |x| uniformity_loss(spec, &free(&x[0])?))?,
            );
        }
        record(
            "total",
            finite_difference_error(&pair, h, |x| {
                total_loss(&w, &sfrik, &free(&x[0])?, &free(&x[1])?)
            })?,
        );
        record(
            "simclr",
            finite_difference_error(&pair, h, |x| {
                simclr_regularizer(w.tau, &free(&x[0])?, &free(&x[1])?)
            })?,
        );
        record(
            "auh",
            finite_difference_error(&pair, h, |x| {
                auh_regularizer(w.t_scale, &free(&x[0])?, &free(&x[1])?)
            })?,
        );
        // VICReg embeddings are unnormalized; scales straddle γ so both hinge
        // branches occur. Batches near the kink are redrawn.
        let (v1, v2) = loop {
            let scales: Vec<f64> = (0..q).map(|_| rng.random_range(0.3..1.8)).collect();
            let mut a = gaussian_matrix(&mut rng, n, q);
            let mut b = gaussian_matrix(&mut rng, n, q);
            for (j, s) in scales.iter().enumerate() {
                a.column_mut(j).scale_mut(*s);
                b.column_mut(j).scale_mut(*s);
            }
            if !near_vicreg_kink(&a, &w, 1e-3) && !near_vicreg_kink(&b, &w, 1e-3) {
                break (a, b);
            }
        };
        record(
            "vicreg",
            finite_difference_error(&[v1, v2], h, |x| {
                vicreg_regularizer(&w, &free(&x[0])?, &free(&x[1])?)
            })?,
        );
    }
    Ok(worst)
}

fn gradient_suite(seed: u64) -> Result<Vec<Check>> {
    Ok(gradient_errors(seed, 20, 8, 6)?
        .into_iter()
        .map(|(name, err)| Check::at_most(format!("gradients.{name}"), err, 1e-5))
        .collect())
}

fn sampling_suite(seed: u64) -> Result<Vec<Check>> {
    let s = sample_uniform_sphere(3, 100_000, seed)?;
    let m = s.matrix();
    let mean = (0..3).map(|j| m.column(j).mean().abs()).fold(0.0, f64::max);
    let second = (m.column(0).map(|x| x * x).mean() - 1.0 / 3.0).abs();
    let again = sample_uniform_sphere(3, 100_000, seed)?;
    let same = f64::from(u8::from(&again == &s));
    let unit = m.row_iter().map(|r| (r.norm() - 1.0).abs()).fold(0.0, f64::max);

    let spec = KernelSpec::sfrik(5, 1.0, 3.0, 0.0)?;
    let mut rng = rng_for(seed, 19);
    let z = SampleSet::from_matrix(unit_rows(&mut rng, 64, 5))?;
    let self_mmd = mmd_two_sample(&spec, &z, &z)?.abs();

    let w = sample_uniform_sphere(5, 16384, seed.wrapping_add(1))?;
    let est = mmd_two_sample_se(&spec, z.matrix(), w.matrix())?;
    let unif = uniformity_loss(&spec, &z.to_batch())?.value;
    let z_score = (est.estimate - unif).abs() / est.std_error;

    let r = random_rotation(&mut rng, 5);
    let zr = SampleSet::from_matrix(z.matrix() * r.transpose())?;
    let wr = SampleSet::from_matrix(w.matrix().rows(0, 2048) * r.transpose())?;
    let w_small = SampleSet::from_matrix(w.matrix().rows(0, 2048).into_owned())?;
    let rot = (mmd_two_sample(&spec, &z, &w_small)? - mmd_two_sample(&spec, &zr, &wr)?).abs();

    Ok(vec![
        Check::at_most("sampling.coordinate_mean", mean, 0.01),
        Check::at_most("sampling.second_moment", second, 0.005),
        Check::at_least("sampling.deterministic", same, 1.0),
        Check::at_most("sampling.unit_rows", unit, 1e-12),
        Check::at_most("sampling.self_mmd", self_mmd, 0.0),
        Check::at_most("sampling.mmd_vs_uniformity_standard_errors", z_score, 3.0),
        Check::at_most("sampling.rotation_invariance", rot, 1e-10),
    ])
}

/// Outcome of the uniformity-only runs on `2q` points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MomentRun {
    pub q: usize,
    pub final_mean_norm: f64,
    pub final_autocorr_dev: f64,
    pub initial_mmd: f64,
    pub initial_mmd_se: f64,
    pub final_mmd: f64,
    pub final_mmd_se: f64,
    pub ablation_initial_mean_norm: f64,
    pub ablation_final_mean_norm: f64,
}

fn uniformity_only(q: usize, b1: f64, b2: f64, steps: usize) -> Result<OptimConfig> {
    let weights = LossWeights {
        lambda: 0.0,
        ..LossWeights::default()
    };
    let mut cfg = OptimConfig::new(Regularizer::Sfrik, weights, KernelSpec::sfrik(q, b1, b2, 0.0)?, steps);
    cfg.eval_every = steps;
    Ok(cfg)
}

/// Main run from a single cluster with `b = (1, 1)` and the order-1
/// ablation `b = (0, 1)` from a frame-based start whose pairs of copies
/// cancel no first moment.
pub fn moment_run(q: usize, steps: usize, seed: u64) -> Result<MomentRun> {
    let clustered = generate_two_view_data(&GeneratorParams {
        q,
        n: 2 * q,
        clusters: 1,
        cluster_spread: 1.0,
        noise_angle: 0.0,
        seed,
        layout: Layout::Clustered,
    })?;
    let main = minimize(&uniformity_only(q, 1.0, 1.0, steps)?, &clustered)?;
    let frame = generate_two_view_data(&GeneratorParams {
        q,
        n: 2 * q,
        clusters: 0,
        cluster_spread: 0.1,
        noise_angle: 0.0,
        seed,
        layout: Layout::Frame,
    })?;
    let ablation = minimize(&uniformity_only(q, 0.0, 1.0, steps)?, &frame)?;
    Ok(MomentRun {
        q,
        final_mean_norm: main.last().mean_norm,
        final_autocorr_dev: main.last().autocorr_dev,
        initial_mmd: main.first().mc_mmd,
        initial_mmd_se: main.first().mc_mmd_se,
        final_mmd: main.last().mc_mmd,
        final_mmd_se: main.last().mc_mmd_se,
        ablation_initial_mean_norm: ablation.first().mean_norm,
        ablation_final_mean_norm: ablation.last().mean_norm,
    })
}

fn optimizer_suite(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for q in [4, 8, 16] {
        let r = moment_run(q, 2000, seed)?;
        checks.push(Check::at_most(format!("optimizer.q{q}.mean_norm"), r.final_mean_norm, 0.05));
        checks.push(Check::at_most(
            format!("optimizer.q{q}.autocorr_dev"),
            r.final_autocorr_dev,
            0.05,
        ));
        checks.push(Check::at_least(
            format!("optimizer.q{q}.ablation_mean_norm_ratio"),
            r.ablation_final_mean_norm / r.ablation_initial_mean_norm,
            0.5,
        ));
        checks.push(Check::at_most(
            format!("optimizer.q{q}.mc_mmd_ratio"),
            r.final_mmd / r.initial_mmd,
            0.1,
        ));
    }

    // Determinism, unit norm, descent over 50-step windows.
    let data = generate_two_view_data(&GeneratorParams {
        q: 6,
        n: 24,
        clusters: 2,
        seed,
        ..GeneratorParams::default()
    })?;
    let mut cfg = uniformity_only(6, 1.0, 3.0, 400)?;
    cfg.eval_every = 20;
    let a = minimize(&cfg, &data)?;
    let b = minimize(&cfg, &data)?;
    checks.push(Check::at_least(
        "optimizer.deterministic",
        f64::from(u8::from(a.to_csv() == b.to_csv() && a.z1 == b.z1)),
        1.0,
    ));
    let norm_dev = a
        .z1
        .row_iter()
        .chain(a.z2.row_iter())
        .map(|r| (r.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("optimizer.unit_norm", norm_dev, 1e-9));
    let rise = a
        .loss_history
        .windows(51)
        .map(|w| w[50] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check::at_most("optimizer.window_descent", rise, 1e-9));

    // A nearly collapsed start is pulled apart by the preset regularizer.
    let q = 16;
    let collapsed = generate_two_view_data(&GeneratorParams {
        q,
        n: 64,
        clusters: 1,
        cluster_spread: 0.05,
        noise_angle: 0.05,
        seed,
        layout: Layout::Clustered,
    })?;
    let (weights, kernel) = find_preset("imagenet-q8192-l2")?.desk_scaled(q)?;
    let mut cfg = OptimConfig::new(Regularizer::Sfrik, weights, kernel, 2000);
    cfg.eval_every = 2000;
    let run = minimize(&cfg, &collapsed)?;
    checks.push(Check::at_most(
        "optimizer.collapse_autocorr_ratio",
        run.last().autocorr_dev / run.first().autocorr_dev,
        0.2,
    ));
    let stats = embedding_moment_stats(&collapsed.z1);
    checks.push(Check::at_least("optimizer.collapsed_start_mean_norm", stats.mean_norm, 0.99));
    Ok(checks)
}
