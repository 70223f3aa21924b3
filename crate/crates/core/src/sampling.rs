//! Uniform sampling on the sphere and Monte-Carlo kernel estimators.
//!
//! Row `i` of a sample set is drawn from a ChaCha20 stream keyed by
//! `(seed, i)`, so rows can be generated in any order or in parallel and
//! the matrix is the same on every platform.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::kernels::{KernelFn, KernelSpec};

/// Number of blocks behind every reported standard error.
pub const SE_BLOCKS: usize = 100;

pub const GENERATOR_LABEL: &str = "chacha20-gaussian-normalized";

/// `n` points on `S^{q-1}` with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    data: DMatrix<f64>,
    seed: u64,
    generator: String,
}

impl SampleSet {
    /// Wraps existing points (labelled as external).
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let batch = EmbeddingBatch::new(data)?;
        Ok(Self {
            data: batch.into_matrix(),
            seed: 0,
            generator: "external".into(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator(&self) -> &str {
        &self.generator
    }

    pub fn to_batch(&self) -> EmbeddingBatch {
        EmbeddingBatch::new(self.data.clone()).expect("sample rows are unit vectors")
    }

    /// One row per point, 17 significant digits.
    pub fn to_csv(&self) -> String {
        crate::io::matrix_to_csv(&self.data)
    }
}

/// RNG for row `index` of the set generated from `seed`.
pub fn row_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One uniform point: `q` standard normals, normalized.
pub fn uniform_point<R: Rng>(rng: &mut R, q: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-150 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `n` i.i.d. uniform points on `S^{q-1}`, deterministic in `seed`.
pub fn sample_uniform_sphere(q: usize, n: usize, seed: u64) -> Result<SampleSet> {
    if q < 2 {
        return Err(Error::Domain(format!("dimension q = {q} must be >= 2")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be >= 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| uniform_point(&mut row_rng(seed, i), q))
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(SampleSet {
        data: DMatrix::from_row_slice(n, q, &flat),
        seed,
        generator: GENERATOR_LABEL.into(),
    })
}

/// Monte-Carlo estimate with its block standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// `count` contiguous, nearly equal ranges covering `0..n`.
fn block_ranges(n: usize, count: usize) -> Vec<Range<usize>> {
    let count = count.min(n).max(1);
    (0..count)
        .map(|b| (b * n / count)..((b + 1) * n / count))
        .collect()
}

/// Mean of pseudo-values and the standard error of that mean.
fn mean_and_se(values: &[f64]) -> McEstimate {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1.0)
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        std_error: (var / b).sqrt(),
    }
}

/// `∫ K(u, v) dU(u)` by Monte Carlo. Equals `b_0` for every unit `v`.
pub fn uniform_mean_embedding_mc(
    spec: &KernelSpec,
    v: &[f64],
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if v.len() != spec.q() {
        return Err(Error::Shape(format!(
            "probe has length {}, kernel has q = {}",
            v.len(),
            spec.q()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("probe must be a unit vector, norm {norm}")));
    }
    if n < SE_BLOCKS {
        return Err(Error::Domain(format!("need at least {SE_BLOCKS} samples")));
    }
    let f = spec.evaluator()?;
    let u = sample_uniform_sphere(spec.q(), n, seed)?;
    let t = u.matrix() * DVector::from_column_slice(v);
    let ranges = block_ranges(n, SE_BLOCKS);
    let means: Vec<f64> = ranges
        .iter()
        .map(|r| {
            let s: f64 = t.as_slice()[r.clone()]
                .iter()
                .map(|&ti| f.value(ti.clamp(-1.0, 1.0)))
                .sum();
            s / r.len() as f64
        })
        .collect();
    // Blocks differ in size by at most one row; the plain mean of block
    // means is used for the standard error, the pooled mean for the value.
    let pooled = means
        .iter()
        .zip(&ranges)
        .map(|(m, r)| m * r.len() as f64)
        .sum::<f64>()
        / n as f64;
    let se = mean_and_se(&means).std_error;
    Ok(McEstimate {
        estimate: pooled,
        std_error: se,
    })
}

/// Sum of `K(a_i, b_j)` over all `i` and over `j` in each block of `b`.
fn block_kernel_sums(f: &KernelFn, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    block_ranges(b.nrows(), SE_BLOCKS)
        .into_par_iter()
        .map(|r| {
            let block = b.rows(r.start, r.len());
            let t = a * block.transpose();
            t.iter().map(|&x| f.value(x.clamp(-1.0, 1.0))).sum()
        })
        .collect()
}

fn check_same_dim(spec: &KernelSpec, z: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<()> {
    if z.ncols() != spec.q() || w.ncols() != spec.q() {
        return Err(Error::Shape(format!(
            "sample dimensions {} and {} must equal kernel q = {}",
            z.ncols(),
            w.ncols(),
            spec.q()
        )));
    }
    if z.nrows() == 0 || w.nrows() == 0 {
        return Err(Error::Shape("empty sample".into()));
    }
    Ok(())
}

/// Biased two-sample estimate
/// `mean K(z, z') + mean K(w, w') - 2 mean K(z, w)`.
pub fn mmd_two_sample(spec: &KernelSpec, z: &SampleSet, w: &SampleSet) -> Result<f64> {
    Ok(mmd_two_sample_se(spec, z.matrix(), w.matrix())?.estimate)
}

/// [`mmd_two_sample`] with a standard error over blocks of `w`.
///
/// The pseudo-value of block `b` is
/// `Kzz - 2 Kzw_b + 2 Kww_b - Kww`, where `Kzw_b` and `Kww_b` average over
/// the points of block `b` only. Their mean is the estimate itself.
pub fn mmd_two_sample_se(
    spec: &KernelSpec,
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<McEstimate> {
    check_same_dim(spec, z, w)?;
    let f = spec.evaluator()?;
    let ww = block_kernel_sums(&f, w, w);
    let reference = UniformReferenceParts::new(w, ww);
    let zz: f64 = block_kernel_sums(&f, z, z).iter().sum();
    let zw = block_kernel_sums(&f, z, w);
    Ok(reference.combine(z.nrows(), zz, &zw))
}

struct UniformReferenceParts {
    ranges: Vec<Range<usize>>,
    m: usize,
    ww_total: f64,
    ww_blocks: Vec<f64>,
}

impl UniformReferenceParts {
    fn new(w: &DMatrix<f64>, ww_blocks: Vec<f64>) -> Self {
        let m = w.nrows();
        Self {
            ranges: block_ranges(m, SE_BLOCKS),
            m,
            ww_total: ww_blocks.iter().sum(),
            ww_blocks,
        }
    }

    fn combine(&self, n: usize, zz_total: f64, zw_blocks: &[f64]) -> McEstimate {
        let (nf, mf) = (n as f64, self.m as f64);
        let kzz = zz_total / (nf * nf);
        let kww = self.ww_total / (mf * mf);
        let kzw = zw_blocks.iter().sum::<f64>() / (nf * mf);
        let estimate = kzz + kww - 2.0 * kzw;
        let pseudo: Vec<f64> = self
            .ranges
            .iter()
            .zip(zw_blocks.iter().zip(&self.ww_blocks))
            .map(|(r, (zw, ww))| {
                let len = r.len() as f64;
                kzz - 2.0 * zw / (nf * len) + 2.0 * ww / (mf * len) - kww
            })
            .collect();
        McEstimate {
            estimate,
            std_error: mean_and_se(&pseudo).std_error,
        }
    }
}

/// A fixed uniform sample with its self-interaction precomputed, for
/// repeated distance-to-uniform estimates against one kernel.
pub struct UniformReference {
    spec: KernelSpec,
    kernel: KernelFn,
    samples: SampleSet,
    parts: UniformReferenceParts,
}

impl UniformReference {
    pub fn new(spec: &KernelSpec, m: usize, seed: u64) -> Result<Self> {
        let samples = sample_uniform_sphere(spec.q(), m, seed)?;
        let kernel = spec.evaluator()?;
        let ww = block_kernel_sums(&kernel, samples.matrix(), samples.matrix());
        let parts = UniformReferenceParts::new(samples.matrix(), ww);
        Ok(Self {
            spec: spec.clone(),
            kernel,
            samples,
            parts,
        })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    /// Squared MMD between the rows of `z` and the uniform distribution,
    /// estimated against the stored sample.
    pub fn mmd(&self, z: &DMatrix<f64>) -> Result<McEstimate> {
        check_same_dim(&self.spec, z, self.samples.matrix())?;
        let zz: f64 = block_kernel_sums(&self.kernel, z, z).iter().sum();
        let zw = block_kernel_sums(&self.kernel, z, self.samples.matrix());
        Ok(self.parts.combine(z.nrows(), zz, &zw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_moments_and_determinism() {
        let s = sample_uniform_sphere(3, 100_000, 7).unwrap();
        let m = s.matrix();
        for j in 0..3 {
            assert!(m.column(j).mean().abs() < 0.01);
        }
        let sq = m.column(0).map(|x| x * x).mean();
        assert!((sq - 1.0 / 3.0).abs() < 0.005);
        for row in m.row_iter() {
            assert!((row.norm() - 1.0).abs() < 1e-12);
        }
        let again = sample_uniform_sphere(3, 100_000, 7).unwrap();
        assert_eq!(s, again);
        assert_ne!(s, sample_uniform_sphere(3, 100_000, 8).unwrap());
    }

    #[test]
    fn prefix_rows_do_not_depend_on_n() {
        let a = sample_uniform_sphere(5, 10, 3).unwrap();
        let b = sample_uniform_sphere(5, 20, 3).unwrap();
        assert_eq!(a.matrix(), &b.matrix().rows(0, 10).into_owned());
    }

    #[test]
    fn mean_embedding_is_constant_term() {
        let spec = KernelSpec::truncated(5, &[(0, 2.0), (1, 5.0), (2, 3.0)]).unwrap();
        let v = [0.0, 0.6, 0.0, 0.8, 0.0];
        let r = uniform_mean_embedding_mc(&spec, &v, 100_000, 11).unwrap();
        assert!((r.estimate - 2.0).abs() <= 3.0 * r.std_error, "{r:?}");
        let c = uniform_mean_embedding_mc(&spec.centered(), &v, 100_000, 11).unwrap();
        assert!(c.estimate.abs() <= 3.0 * c.std_error);
    }

    #[test]
    fn identical_samples_have_zero_mmd() {
        let spec = KernelSpec::rbf(4, 1.5).unwrap();
        let z = sample_uniform_sphere(4, 300, 1).unwrap();
        assert_eq!(mmd_two_sample(&spec, &z, &z).unwrap(), 0.0);
    }

    #[test]
    fn point_mass_against_uniform() {
        let spec = KernelSpec::sfrik(6, 1.0, 1.0, 0.0).unwrap();
        let mut z = DMatrix::zeros(50, 6);
        z.column_mut(2).fill(1.0);
        let z = SampleSet::from_matrix(z).unwrap();
        let w = sample_uniform_sphere(6, 8192, 5).unwrap();
        let r = mmd_two_sample_se(&spec, z.matrix(), w.matrix()).unwrap();
        assert!((r.estimate - 2.0).abs() < 3.0 * r.std_error + 1e-3, "{r:?}");
    }

    #[test]
    fn reference_matches_direct_estimate() {
        let spec = KernelSpec::rbf(3, 1.0).unwrap().centered();
        let reference = UniformReference::new(&spec, 2000, 9).unwrap();
        let z = sample_uniform_sphere(3, 64, 10).unwrap();
        let a = reference.mmd(z.matrix()).unwrap();
        let b = mmd_two_sample_se(&spec, z.matrix(), reference.samples().matrix()).unwrap();
        assert_eq!(a, b);
        assert!(a.std_error > 0.0);
    }
}
