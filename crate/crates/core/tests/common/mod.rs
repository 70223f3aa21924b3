//! Reference formulas written independently of the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha20Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| rng.sample(StandardNormal))
}

pub fn unit_rows(rng: &mut ChaCha20Rng, n: usize, q: usize) -> DMatrix<f64> {
    let mut m = gaussian(rng, n, q);
    for i in 0..n {
        let norm = m.row(i).norm();
        for j in 0..q {
            m[(i, j)] /= norm;
        }
    }
    m
}

/// `|S^{d-1}| = 2 π^{d/2} / Γ(d/2)`.
pub fn surface_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / libm::tgamma(d as f64 / 2.0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Dimension of the degree-`l` harmonics on `S^{q-1}`.
pub fn harmonic_dim(q: usize, l: usize) -> f64 {
    if l == 0 {
        1.0
    } else {
        (2 * l + q - 2) as f64 / l as f64 * binomial(l + q - 3, l - 1)
    }
}

/// Classical Legendre polynomial by Bonnet's recursion.
pub fn classical_legendre(l: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if l == 0 {
        return p0;
    }
    for k in 1..l {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// `U_l(cos θ) / (l + 1) = sin((l+1)θ) / ((l+1) sin θ)`.
pub fn normalized_chebyshev_u(l: usize, t: f64) -> f64 {
    let theta = t.clamp(-1.0, 1.0).acos();
    let s = theta.sin();
    let m = (l + 1) as f64;
    if s.abs() < 1e-12 {
        let sign = if t < 0.0 && l % 2 == 1 { -1.0 } else { 1.0 };
        return sign;
    }
    (m * theta).sin() / (m * s)
}

/// `P_1` and `P_2` for dimension `q`.
pub fn low_legendre(q: usize, l: usize, t: f64) -> f64 {
    let qf = q as f64;
    match l {
        0 => 1.0,
        1 => t,
        2 => (qf * t * t - 1.0) / (qf - 1.0),
        _ => unreachable!(),
    }
}

/// `E_u f(<u, v>)` for uniform `u` on `S^{q-1}`, by composite Simpson in
/// the angle with `θ = π x³` to soften endpoint singularities.
pub fn sphere_average(q: usize, f: impl Fn(f64) -> f64) -> f64 {
    let m = 40_000;
    let h = 1.0 / m as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=m {
        let x = k as f64 * h;
        let theta = PI * x * x * x;
        let jac = 3.0 * PI * x * x;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let base = w * jac * theta.sin().powi(q as i32 - 2);
        num += base * f(theta.cos());
        den += base;
    }
    num / den
}

/// Legendre coefficient `b_l = N(q,l) E[f(t) P_l(t)]` for `q = 3`.
pub fn coefficient_q3(l: usize, f: impl Fn(f64) -> f64) -> f64 {
    harmonic_dim(3, l) * sphere_average(3, |t| f(t) * classical_legendre(l, t))
}

/// Central-difference gradient of `f` with respect to every entry of every
/// input.
pub fn numeric_gradient(
    inputs: &[DMatrix<f64>],
    h: f64,
    f: impl Fn(&[DMatrix<f64>]) -> f64,
) -> Vec<DMatrix<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::new();
    for b in 0..inputs.len() {
        let (r, c) = inputs[b].shape();
        let mut g = DMatrix::zeros(r, c);
        for idx in 0..r * c {
            let orig = work[b][idx];
            work[b][idx] = orig + h;
            let plus = f(&work);
            work[b][idx] = orig - h;
            let minus = f(&work);
            work[b][idx] = orig;
            g[idx] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

pub fn relative_gradient_error(analytic: &[DMatrix<f64>], numeric: &[DMatrix<f64>]) -> f64 {
    let (mut diff, mut norm) = (0.0, 0.0);
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n).norm_squared();
        norm += a.norm_squared();
    }
    diff.sqrt() / norm.sqrt().max(1e-300)
}

/// `(||mean||, ||ZᵀZ/n - I/q||_F)` of unit rows.
pub fn moment_stats(z: &DMatrix<f64>) -> (f64, f64) {
    let (n, q) = z.shape();
    let mut mean = vec![0.0; q];
    let mut auto = DMatrix::<f64>::zeros(q, q);
    for i in 0..n {
        for a in 0..q {
            mean[a] += z[(i, a)] / n as f64;
            for b in 0..q {
                auto[(a, b)] += z[(i, a)] * z[(i, b)] / n as f64;
            }
        }
    }
    for a in 0..q {
        auto[(a, a)] -= 1.0 / q as f64;
    }
    (mean.iter().map(|x| x * x).sum::<f64>().sqrt(), auto.norm())
}
