//! End-to-end acceptance checks. Runs without the test harness so every
//! PASS/FAIL line is printed; exits non-zero if any line fails.

mod common;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;

use common::*;
use spherical_mmd::batch::EmbeddingBatch;
use spherical_mmd::bench::{default_sweeps, run_sweeps, Variable};
use spherical_mmd::cli::cmd_minimize;
use spherical_mmd::config::ExperimentConfig;
use spherical_mmd::harmonics::HarmonicBasis;
use spherical_mmd::kernels::{
    gendist_coefficients, gendist_coefficients_quadrature, rbf_coefficient_bound, rbf_coefficients,
    KernelSpec,
};
use spherical_mmd::losses::{
    alignment_loss, auh_regularizer, objective, simclr_regularizer, total_loss, uniformity_loss,
    vicreg_regularizer, LossReport, LossWeights, Regularizer,
};
use spherical_mmd::quadrature::GaussJacobi;
use spherical_mmd::sampling::uniform_mean_embedding_mc;
use spherical_mmd::sphere_math::{legendre_closed_form, LegendreTable};
use spherical_mmd::verify::moment_run;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn legendre_recurrence() -> Outcome {
    let start = Instant::now();
    let (mut rel, mut abs): (f64, f64) = (0.0, 0.0);
    for q in 3..=64 {
        let table = LegendreTable::new(q, 30).unwrap();
        for k in 0..1001 {
            let t = -1.0 + 2.0 * k as f64 / 1000.0;
            for (l, r) in table.evaluate(t).unwrap().into_iter().enumerate() {
                let exact = legendre_closed_form(q, l, t).unwrap();
                let err = (r - exact).abs();
                if exact.abs() >= 1e-14 {
                    rel = rel.max(err / exact.abs());
                } else {
                    abs = abs.max(err);
                }
            }
        }
    }
    // Independent closed forms for q = 3 and q = 4.
    let mut oracle: f64 = 0.0;
    for k in 0..1001 {
        let t = -1.0 + 2.0 * k as f64 / 1000.0;
        let t3 = LegendreTable::new(3, 30).unwrap().evaluate(t).unwrap();
        let t4 = LegendreTable::new(4, 30).unwrap().evaluate(t).unwrap();
        for l in 0..=30 {
            oracle = oracle.max((t3[l] - classical_legendre(l, t)).abs());
            oracle = oracle.max((t4[l] - normalized_chebyshev_u(l, t)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        title: "Legendre recurrence vs closed form",
        pass: rel <= 1e-10 && abs <= 1e-14 && oracle <= 1e-12 && secs < 10.0,
        detail: format!(
            "max rel {rel:.2e} (|P|>=1e-14), max abs near roots {abs:.2e}, q=3/4 oracle {oracle:.2e}, {secs:.1}s"
        ),
    }
}

fn quadrature_orthogonality() -> Outcome {
    let (mut off, mut diag): (f64, f64) = (0.0, 0.0);
    for q in 3..=16 {
        let rule = GaussJacobi::for_dimension(q, 200).unwrap();
        let table = LegendreTable::new(q, 10).unwrap();
        let vals: Vec<Vec<f64>> = rule.nodes().iter().map(|&x| table.evaluate(x).unwrap()).collect();
        for n in 0..=10 {
            for m in 0..=10 {
                let s: f64 = rule.weights().iter().zip(&vals).map(|(w, p)| w * p[n] * p[m]).sum();
                if n == m {
                    let expected = surface_area(q) / surface_area(q - 1) / harmonic_dim(q, n);
                    diag = diag.max((s - expected).abs() / expected);
                } else {
                    off = off.max(s.abs());
                }
            }
        }
    }
    Outcome {
        id: 2,
        title: "quadrature orthogonality",
        pass: off <= 1e-9 && diag <= 1e-9,
        detail: format!("off-diagonal {off:.2e}, diagonal rel {diag:.2e}, 200 nodes"),
    }
}

fn mean_embedding_mc() -> Outcome {
    let mut r = rng(301);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for q in [3usize, 8, 32] {
        let kernels = [
            KernelSpec::truncated(q, &[(0, 2.0), (1, 5.0), (2, 3.0)]).unwrap(),
            KernelSpec::rbf(q, 1.0).unwrap(),
            KernelSpec::gendist(q, (q as f64 - 1.0) / 2.0 + 0.5).unwrap(),
        ];
        for spec in &kernels {
            let b0 = sphere_average(q, |t| spec.eval(t).unwrap());
            for d in 0..5 {
                let v: Vec<f64> = unit_rows(&mut r, 1, q).iter().copied().collect();
                let est = uniform_mean_embedding_mc(spec, &v, 100_000, 1000 + 10 * q as u64 + d).unwrap();
                worst = worst.max((est.estimate - b0).abs() / est.std_error);
                count += 1;
            }
        }
    }
    Outcome {
        id: 3,
        title: "uniform mean embedding is constant",
        pass: worst <= 3.0,
        detail: format!("{count} cases, worst |est - b0| = {worst:.2} SE"),
    }
}

fn gram_vs_feature() -> Outcome {
    let mut r = rng(401);
    let mut worst: f64 = 0.0;
    for b in 0..50 {
        let q = [3, 8, 16][b % 3];
        let n = r.random_range(1..=256);
        let b1 = 50.0 * (1.0 - r.random::<f64>());
        let b2 = 50.0 * (1.0 - r.random::<f64>());
        let z = EmbeddingBatch::new(unit_rows(&mut r, n, q)).unwrap();
        let gram = uniformity_loss(&KernelSpec::sfrik(q, b1, b2, 0.0).unwrap(), &z).unwrap().value;
        let feat = HarmonicBasis::build(q, b1, b2).unwrap().mmd_via_moments(&z).unwrap();
        worst = worst.max((gram - feat).abs() / gram.abs().max(1.0));
    }
    Outcome {
        id: 4,
        title: "Gram path vs feature-map path",
        pass: worst <= 1e-8,
        detail: format!("50 batches, worst scaled diff {worst:.2e}"),
    }
}

fn addition_theorem() -> Outcome {
    let mut r = rng(501);
    let mut worst: f64 = 0.0;
    for q in 3..=12 {
        let basis = HarmonicBasis::build(q, 1.0, 1.0).unwrap();
        let u = unit_rows(&mut r, 1000, q);
        let v = unit_rows(&mut r, 1000, q);
        for l in [1, 2] {
            let scale = harmonic_dim(q, l) / surface_area(q);
            for i in 0..1000 {
                let ui: Vec<f64> = u.row(i).iter().copied().collect();
                let vi: Vec<f64> = v.row(i).iter().copied().collect();
                let lhs = basis.harmonics(l, &ui).unwrap().dot(&basis.harmonics(l, &vi).unwrap());
                let t: f64 = ui.iter().zip(&vi).map(|(a, b)| a * b).sum();
                worst = worst.max((lhs - scale * low_legendre(q, l, t)).abs());
            }
        }
    }
    Outcome {
        id: 5,
        title: "addition theorem",
        pass: worst <= 1e-8,
        detail: format!("1000 pairs x q 3..12 x l 1,2, worst residual {worst:.2e}"),
    }
}

fn kernel_coefficients() -> Outcome {
    let (mut gd, mut oracle): (f64, f64) = (0.0, 0.0);
    for s in [1.2, 1.5, 1.8] {
        let closed = gendist_coefficients(3, s, 10).unwrap();
        let quad = gendist_coefficients_quadrature(3, s, 10).unwrap();
        let spec = KernelSpec::gendist(3, s).unwrap();
        for l in 0..=10 {
            gd = gd.max((closed[l] - quad[l]).abs());
            let reference = coefficient_q3(l, |t| spec.eval(t).unwrap());
            oracle = oracle.max((closed[l] - reference).abs());
        }
    }
    let b0 = gendist_coefficients(3, 1.5, 0).unwrap()[0];
    let (mut positive, mut within, mut rbf_oracle) = (true, true, 0.0f64);
    for q in [3usize, 8, 16] {
        for sigma in [0.5, 1.0, 2.0, 5.0] {
            let b = rbf_coefficients(q, sigma, 20).unwrap();
            for (l, bl) in b.iter().enumerate() {
                positive &= *bl > 0.0;
                within &= *bl <= rbf_coefficient_bound(q, sigma, l).unwrap();
            }
            if q == 3 {
                let spec = KernelSpec::rbf(3, sigma).unwrap();
                for (l, bl) in b.iter().enumerate().take(6) {
                    rbf_oracle = rbf_oracle.max((bl - coefficient_q3(l, |t| spec.eval(t).unwrap())).abs());
                }
            }
        }
    }
    Outcome {
        id: 6,
        title: "kernel coefficients",
        pass: gd <= 1e-8 && oracle <= 1e-6 && (b0 - 4.0 / 3.0).abs() < 1e-12 && positive && within && rbf_oracle <= 1e-8,
        detail: format!(
            "GenDist closed vs quadrature {gd:.2e}, vs Simpson {oracle:.2e}, b0(s=1.5) {b0:.15}; RBF positive {positive}, within bound {within}, vs Simpson {rbf_oracle:.2e}"
        ),
    }
}

fn check_grad(inputs: &[DMatrix<f64>], f: impl Fn(&[DMatrix<f64>]) -> LossReport) -> f64 {
    let analytic = f(inputs).gradients;
    let numeric = numeric_gradient(inputs, 1e-5, |x| f(x).value);
    relative_gradient_error(&analytic, &numeric)
}

fn free(m: &DMatrix<f64>) -> EmbeddingBatch {
    EmbeddingBatch::unnormalized(m.clone()).unwrap()
}

fn hinge_gap(z: &DMatrix<f64>, w: &LossWeights) -> f64 {
    let n = z.nrows() as f64;
    (0..z.ncols())
        .map(|j| {
            let c = z.column(j);
            let m = c.mean();
            let var = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            ((var + w.epsilon).sqrt() - w.gamma).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

fn gradients() -> Outcome {
    let (q, n) = (6, 8);
    let mut r = rng(701);
    let w = LossWeights::default();
    let kernels = [
        KernelSpec::sfrik(q, 1.0, 4.0, 2.0).unwrap(),
        KernelSpec::rbf(q, 1.5).unwrap().centered(),
        KernelSpec::gendist(q, 3.0).unwrap().centered(),
    ];
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|(k, _)| *k == name) {
        Some(x) => x.1 = x.1.max(e),
        None => worst.push((name, e)),
    };
    for _ in 0..20 {
        let pair = [unit_rows(&mut r, n, q), unit_rows(&mut r, n, q)];
        note("align", check_grad(&pair, |x| alignment_loss(&free(&x[0]), &free(&x[1])).unwrap()));
        for (name, spec) in ["unif-sfrik", "unif-rbf", "unif-gendist"].into_iter().zip(&kernels) {
            note(name, check_grad(&pair[..1], |x| uniformity_loss(spec, &free(&x[0])).unwrap()));
        }
        note(
            "total",
            check_grad(&pair, |x| total_loss(&w, &kernels[0], &free(&x[0]), &free(&x[1])).unwrap()),
        );
        note(
            "simclr",
            check_grad(&pair, |x| simclr_regularizer(w.tau, &free(&x[0]), &free(&x[1])).unwrap()),
        );
        note(
            "auh",
            check_grad(&pair, |x| auh_regularizer(w.t_scale, &free(&x[0]), &free(&x[1])).unwrap()),
        );
        let v = loop {
            let scales: Vec<f64> = (0..q).map(|_| r.random_range(0.3..1.8)).collect();
            let mut v = [gaussian(&mut r, n, q), gaussian(&mut r, n, q)];
            for m in v.iter_mut() {
                for (j, s) in scales.iter().enumerate() {
                    m.column_mut(j).scale_mut(*s);
                }
            }
            if v.iter().all(|m| hinge_gap(m, &w) >= 1e-3) {
                break v;
            }
        };
        note("vicreg", check_grad(&v, |x| vicreg_regularizer(&w, &free(&x[0]), &free(&x[1])).unwrap()));
        note(
            "vicreg-objective",
            check_grad(&v, |x| {
                objective(Regularizer::Vicreg, &w, &kernels[0], &free(&x[0]), &free(&x[1])).unwrap()
            }),
        );
    }
    let max = worst.iter().map(|x| x.1).fold(0.0, f64::max);
    let list: Vec<String> = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    Outcome {
        id: 7,
        title: "gradients vs central differences",
        pass: max <= 1e-5,
        detail: list.join(", "),
    }
}

fn optimization() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut ok8 = true;
    let mut ok9 = true;
    let mut d8 = Vec::new();
    let mut d9 = Vec::new();
    for q in [4usize, 8, 16] {
        let run = moment_run(q, 2000, 3).unwrap();
        let ratio = run.ablation_final_mean_norm / run.ablation_initial_mean_norm;
        ok8 &= run.final_mean_norm <= 0.05 && run.final_autocorr_dev <= 0.05 && ratio >= 0.5;
        d8.push(format!(
            "q{q}: mean {:.1e} autocorr {:.1e} ablation ratio {ratio:.3}",
            run.final_mean_norm, run.final_autocorr_dev
        ));
        let mmd_ratio = run.final_mmd / run.initial_mmd;
        ok9 &= mmd_ratio <= 0.1;
        d9.push(format!(
            "q{q}: {:.3e}±{:.1e} -> {:.3e}±{:.1e} (ratio {mmd_ratio:.1e})",
            run.initial_mmd, run.initial_mmd_se, run.final_mmd, run.final_mmd_se
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        Outcome {
            id: 8,
            title: "uniformity-only optimization",
            pass: ok8 && secs < 120.0,
            detail: format!("{}; {secs:.1}s", d8.join("; ")),
        },
        Outcome {
            id: 9,
            title: "MC-MMD drops tenfold",
            pass: ok9,
            detail: d9.join("; "),
        },
    )
}

fn independent_moment_check() -> bool {
    // The reported statistics agree with a direct computation.
    let mut r = rng(801);
    let z = unit_rows(&mut r, 40, 5);
    let batch = EmbeddingBatch::new(z.clone()).unwrap();
    let stats = spherical_mmd::harmonics::embedding_moment_stats(&batch);
    let (m, a) = moment_stats(&z);
    (stats.mean_norm - m).abs() < 1e-12 && (stats.autocorr_deviation - a).abs() < 1e-12
}

fn complexity() -> Outcome {
    let start = Instant::now();
    let report = run_sweeps(&default_sweeps(), 5, 0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let sq = report.exponent(Regularizer::Sfrik, Variable::Q).unwrap();
    let vq = report.exponent(Regularizer::Vicreg, Variable::Q).unwrap();
    let sb = report.exponent(Regularizer::Sfrik, Variable::Batch).unwrap();
    Outcome {
        id: 10,
        title: "complexity scaling",
        pass: (0.8..=1.3).contains(&sq) && (1.7..=2.3).contains(&vq) && (1.7..=2.3).contains(&sb) && secs < 300.0,
        detail: format!("SFRIK~q^{sq:.2}, VICReg~q^{vq:.2}, SFRIK~|I|^{sb:.2}; {secs:.0}s single-threaded"),
    }
}

fn determinism() -> Outcome {
    let doc = r#"
seed = 11
preset = "imagenet-q8192-l2"
[optim]
loss = "sfrik"
steps = 200
eval_every = 20
[data]
q = 8
n = 32
clusters = 2
cluster_spread = 0.3
noise_angle = 0.1
"#;
    let cfg = ExperimentConfig::from_toml(doc).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_minimize(&cfg, Some(42), Some(a.path())).unwrap();
    cmd_minimize(&cfg, Some(42), Some(b.path())).unwrap();
    let ta = std::fs::read(a.path().join("trajectory.csv")).unwrap();
    let tb = std::fs::read(b.path().join("trajectory.csv")).unwrap();
    let za = std::fs::read(a.path().join("final_z1.csv")).unwrap();
    let zb = std::fs::read(b.path().join("final_z1.csv")).unwrap();
    let c = tempfile::tempdir().unwrap();
    cmd_minimize(&cfg, Some(43), Some(c.path())).unwrap();
    let tc = std::fs::read(c.path().join("trajectory.csv")).unwrap();
    Outcome {
        id: 11,
        title: "determinism",
        pass: ta == tb && za == zb && ta != tc,
        detail: format!(
            "{} byte trajectory identical: {}, embeddings identical: {}, other seed differs: {}",
            ta.len(),
            ta == tb,
            za == zb,
            ta != tc
        ),
    }
}

fn main() {
    let mut outcomes = vec![
        legendre_recurrence(),
        quadrature_orthogonality(),
        mean_embedding_mc(),
        gram_vs_feature(),
        addition_theorem(),
        kernel_coefficients(),
        gradients(),
    ];
    let (o8, o9) = optimization();
    let mut o8 = o8;
    o8.pass &= independent_moment_check();
    outcomes.push(o8);
    outcomes.push(o9);
    outcomes.push(complexity());
    outcomes.push(determinism());
    for o in &outcomes {
        println!(
            "[{:02}] {} {}: {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.title,
            o.detail
        );
    }
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("acceptance: {} of {} passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
