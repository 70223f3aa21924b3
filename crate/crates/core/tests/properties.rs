mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;

use common::*;
use spherical_mmd::batch::EmbeddingBatch;
use spherical_mmd::io::{matrix_from_csv, matrix_to_csv};
use spherical_mmd::kernels::KernelSpec;
use spherical_mmd::losses::{
    alignment_loss, auh_regularizer, simclr_regularizer, uniformity_loss, LossWeights,
};
use spherical_mmd::optimizer::tangent_project;
use spherical_mmd::sampling::{mmd_two_sample, sample_uniform_sphere, SampleSet};
use spherical_mmd::sphere_math::{harmonic_space_dim, legendre, legendre_closed_form};
use spherical_mmd::verify::random_rotation;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn legendre_bounded_and_normalized(q in 3usize..=64, l in 0usize..=30, t in -1.0f64..=1.0) {
        let p = legendre(q, l, t).unwrap();
        prop_assert!(p.abs() <= 1.0 + 1e-12);
        prop_assert!((legendre(q, l, 1.0).unwrap() - 1.0).abs() <= 1e-12);
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!((legendre(q, l, -t).unwrap() - sign * p).abs() <= 1e-12);
    }

    #[test]
    fn legendre_matches_classical_forms(l in 0usize..=30, t in -1.0f64..=1.0) {
        prop_assert!((legendre(3, l, t).unwrap() - classical_legendre(l, t)).abs() <= 1e-12);
        prop_assert!((legendre(4, l, t).unwrap() - normalized_chebyshev_u(l, t)).abs() <= 1e-12);
        prop_assert!((legendre_closed_form(3, l, t).unwrap() - classical_legendre(l, t)).abs() <= 1e-10);
    }

    #[test]
    fn harmonic_dimension(q in 3usize..=200, l in 0usize..=40) {
        let n = harmonic_space_dim(q, l).unwrap();
        prop_assert!(n >= 1.0);
        let want = harmonic_dim(q, l);
        prop_assert!((n - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn truncated_kernel_is_legendre_series(
        q in 3usize..=32,
        b0 in 0.0f64..5.0,
        b1 in 0.0f64..50.0,
        b2 in 0.0f64..50.0,
        t in -1.0f64..=1.0,
    ) {
        let spec = KernelSpec::truncated(q, &[(0, b0), (1, b1), (2, b2)]).unwrap();
        let want = b0 + b1 * low_legendre(q, 1, t) + b2 * low_legendre(q, 2, t);
        prop_assert!((spec.eval(t).unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
        let centered = spec.centered();
        prop_assert!((spec.eval(t).unwrap() - centered.eval(t).unwrap() - b0).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn kernel_gram_is_psd(seed in any::<u64>(), q in 3usize..=10, which in 0usize..4) {
        let mut r = rng(seed);
        let z = unit_rows(&mut r, 40, q);
        let half = (q as f64 - 1.0) / 2.0;
        let spec = match which {
            0 => KernelSpec::rbf(q, 2.0).unwrap(),
            1 => KernelSpec::gendist(q, half + 0.4).unwrap(),
            2 => KernelSpec::truncated(q, &[(1, 1.0), (2, 40.0), (3, 40.0)]).unwrap(),
            _ => KernelSpec::sfrik(q, 1.0, 20.0, 0.0).unwrap(),
        };
        let g = &z * z.transpose();
        let k = g.map(|t| spec.eval(t.clamp(-1.0, 1.0)).unwrap());
        prop_assert!(k.symmetric_eigenvalues().min() >= -1e-8);
    }

    #[test]
    fn losses_are_rotation_invariant(seed in any::<u64>(), q in 3usize..=9, n in 2usize..=24) {
        let mut r = rng(seed);
        let z1 = EmbeddingBatch::new(unit_rows(&mut r, n, q)).unwrap();
        let z2 = EmbeddingBatch::new(unit_rows(&mut r, n, q)).unwrap();
        let rot = random_rotation(&mut r, q);
        let (r1, r2) = (z1.rotated(&rot).unwrap(), z2.rotated(&rot).unwrap());
        let w = LossWeights::default();
        let spec = KernelSpec::rbf(q, 1.5).unwrap().centered();
        let pairs = [
            (alignment_loss(&z1, &z2).unwrap().value, alignment_loss(&r1, &r2).unwrap().value),
            (uniformity_loss(&spec, &z1).unwrap().value, uniformity_loss(&spec, &r1).unwrap().value),
            (simclr_regularizer(w.tau, &z1, &z2).unwrap().value, simclr_regularizer(w.tau, &r1, &r2).unwrap().value),
            (auh_regularizer(w.t_scale, &z1, &z2).unwrap().value, auh_regularizer(w.t_scale, &r1, &r2).unwrap().value),
        ];
        for (a, b) in pairs {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn centered_uniformity_is_nonnegative(seed in any::<u64>(), q in 3usize..=12, n in 1usize..=40) {
        let mut r = rng(seed);
        let z = EmbeddingBatch::new(unit_rows(&mut r, n, q)).unwrap();
        for spec in [
            KernelSpec::sfrik(q, 1.0, 40.0, 40.0).unwrap(),
            KernelSpec::rbf(q, 3.0).unwrap().centered(),
            KernelSpec::gendist(q, (q as f64 - 1.0) / 2.0 + 0.7).unwrap().centered(),
        ] {
            prop_assert!(uniformity_loss(&spec, &z).unwrap().value >= -1e-12);
        }
    }

    #[test]
    fn gradient_shape_matches_batch(seed in any::<u64>(), q in 3usize..=8, n in 1usize..=16) {
        let mut r = rng(seed);
        let z = EmbeddingBatch::new(unit_rows(&mut r, n, q)).unwrap();
        let report = uniformity_loss(&KernelSpec::sfrik(q, 1.0, 2.0, 0.0).unwrap(), &z).unwrap();
        prop_assert_eq!(report.gradients[0].shape(), (n, q));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        prop_assert!(json.get("value").is_some() && json.get("terms").is_some() && json.get("grad_norm").is_some());
    }

    #[test]
    fn self_mmd_is_zero(seed in any::<u64>(), q in 3usize..=8, n in 1usize..=30) {
        let mut r = rng(seed);
        let z = SampleSet::from_matrix(unit_rows(&mut r, n, q)).unwrap();
        for spec in [KernelSpec::rbf(q, 1.0).unwrap(), KernelSpec::sfrik(q, 1.0, 3.0, 0.0).unwrap()] {
            prop_assert_eq!(mmd_two_sample(&spec, &z, &z).unwrap(), 0.0);
        }
    }

    #[test]
    fn samples_are_unit_and_prefix_stable(seed in any::<u64>(), q in 3usize..=16, n in 1usize..=64) {
        let s = sample_uniform_sphere(q, n, seed).unwrap();
        for row in s.matrix().row_iter() {
            prop_assert!((row.norm() - 1.0).abs() <= 1e-12);
        }
        let k = n.div_ceil(2);
        let prefix = sample_uniform_sphere(q, k, seed).unwrap();
        prop_assert_eq!(prefix.matrix(), &s.matrix().rows(0, k).into_owned());
    }

    #[test]
    fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..60)) {
        let cols = 3;
        let rows = values.len() / cols;
        prop_assume!(rows > 0);
        let m = DMatrix::from_row_slice(rows, cols, &values[..rows * cols]);
        let back = matrix_from_csv(&matrix_to_csv(&m)).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tangent_projection_is_orthogonal(seed in any::<u64>(), q in 3usize..=20) {
        let mut r = rng(seed);
        let z: Vec<f64> = unit_rows(&mut r, 1, q).iter().copied().collect();
        let g: Vec<f64> = gaussian(&mut r, 1, q).iter().copied().collect();
        let p = tangent_project(&z, &g).unwrap();
        let dot: f64 = p.iter().zip(&z).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() <= 1e-12 * g.iter().map(|x| x.abs()).sum::<f64>().max(1.0));
    }
}
