//! Wall-clock scaling of the regularizers. Each timing covers one value and
//! gradient evaluation.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::kernels::KernelSpec;
use crate::losses::{
    auh_regularizer, simclr_regularizer, uniformity_loss, vicreg_regularizer, LossWeights,
    Regularizer,
};

pub const MIN_REPEATS: usize = 5;
/// Fast cases are repeated until about this much time is spent timing them.
pub const TARGET_SECONDS: f64 = 0.5;
const MAX_REPEATS: usize = 50;
pub const CSV_HEADER: &str = "loss,q,batch,median_s,min_s,max_s,repeats,memory_bytes,memory_kind";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub loss: Regularizer,
    pub q: usize,
    pub batch: usize,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub repeats: usize,
    /// Size in bytes of the dominant intermediate matrix.
    pub memory_bytes: u64,
    /// `gram` (|I|×|I|) or `covariance` (q×q).
    pub memory_kind: &'static str,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.loss.name(),
            self.q,
            self.batch,
            format_f64(self.median_s),
            format_f64(self.min_s),
            format_f64(self.max_s),
            self.repeats,
            self.memory_bytes,
            self.memory_kind
        )
    }
}

/// Which size is swept while the other stays fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Q,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub loss: Regularizer,
    pub variable: Variable,
    /// The size that is held fixed.
    pub fixed: usize,
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub loss: Regularizer,
    pub variable: Variable,
    pub fixed: usize,
    pub sizes: Vec<usize>,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub fits: Vec<ScalingFit>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn fits_json(&self) -> String {
        serde_json::to_string_pretty(&self.fits).expect("fits serialize")
    }

    pub fn exponent(&self, loss: Regularizer, variable: Variable) -> Option<f64> {
        self.fits
            .iter()
            .find(|f| f.loss == loss && f.variable == variable)
            .map(|f| f.exponent)
    }
}

/// Default sweeps: SFRIK and VICReg over `q` at |I| = 256, SFRIK over |I|
/// at q = 1024.
pub fn default_sweeps() -> Vec<Sweep> {
    let qs = vec![1024, 2048, 4096, 8192, 16384];
    vec![
        Sweep {
            loss: Regularizer::Sfrik,
            variable: Variable::Q,
            fixed: 256,
            sizes: qs.clone(),
        },
        Sweep {
            loss: Regularizer::Vicreg,
            variable: Variable::Q,
            fixed: 256,
            sizes: qs,
        },
        Sweep {
            loss: Regularizer::Sfrik,
            variable: Variable::Batch,
            fixed: 1024,
            sizes: vec![128, 256, 512, 1024, 2048],
        },
    ]
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!(
            "slope needs two or more paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("log-log fit needs distinct sizes".into()));
    }
    Ok(sxy / sxx)
}

/// Bytes of the dominant intermediate: the |I|×|I| Gram matrix for the
/// kernel and contrastive losses, the q×q covariance for VICReg.
pub fn analytic_memory(loss: Regularizer, q: usize, batch: usize) -> (u64, &'static str) {
    let f = std::mem::size_of::<f64>() as u64;
    match loss {
        Regularizer::Vicreg => (f * (q as u64).pow(2), "covariance"),
        _ => (f * (batch as u64).pow(2), "gram"),
    }
}

fn bench_inputs(loss: Regularizer, q: usize, batch: usize, seed: u64) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draw = || DMatrix::from_fn(batch, q, |_, _| StandardNormal.sample(&mut rng));
    let (a, b) = (draw(), draw());
    if loss.normalized() {
        Ok((EmbeddingBatch::normalizing(a)?, EmbeddingBatch::normalizing(b)?))
    } else {
        Ok((EmbeddingBatch::unnormalized(a)?, EmbeddingBatch::unnormalized(b)?))
    }
}

/// Times at least `repeats` evaluations of the regularizer after one warm-up
/// call, more when a single call is short.
pub fn bench_one(loss: Regularizer, q: usize, batch: usize, repeats: usize, seed: u64) -> Result<BenchRecord> {
    if repeats < MIN_REPEATS {
        return Err(Error::Config(format!("at least {MIN_REPEATS} repeats are required")));
    }
    let (z1, z2) = bench_inputs(loss, q, batch, seed)?;
    let weights = LossWeights::default();
    let spec = KernelSpec::sfrik(q, 1.0, 40.0, 0.0)?;
    let run = || -> Result<f64> {
        let r = match loss {
            Regularizer::Sfrik => {
                let a = uniformity_loss(&spec, &z1)?;
                let b = uniformity_loss(&spec, &z2)?;
                a.value + b.value
            }
            Regularizer::Simclr => simclr_regularizer(weights.tau, &z1, &z2)?.value,
            Regularizer::Auh => auh_regularizer(weights.t_scale, &z1, &z2)?.value,
            Regularizer::Vicreg => vicreg_regularizer(&weights, &z1, &z2)?.value,
        };
        Ok(r)
    };
    let warm = Instant::now();
    std::hint::black_box(run()?);
    let per_call = warm.elapsed().as_secs_f64().max(1e-9);
    let repeats = repeats.max(((TARGET_SECONDS / per_call).ceil() as usize).min(MAX_REPEATS));
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(run()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    };
    let (memory_bytes, memory_kind) = analytic_memory(loss, q, batch);
    Ok(BenchRecord {
        loss,
        q,
        batch,
        median_s: median,
        min_s: times[0],
        max_s: times[times.len() - 1],
        repeats,
        memory_bytes,
        memory_kind,
    })
}

/// Runs every sweep on a single-threaded pool and fits the exponents.
pub fn run_sweeps(sweeps: &[Sweep], repeats: usize, seed: u64) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let mut records = Vec::new();
        let mut fits = Vec::new();
        for sweep in sweeps {
            if sweep.sizes.len() < 4 {
                return Err(Error::Config("each sweep needs at least four sizes".into()));
            }
            let mut times = Vec::new();
            for &size in &sweep.sizes {
                let (q, batch) = match sweep.variable {
                    Variable::Q => (size, sweep.fixed),
                    Variable::Batch => (sweep.fixed, size),
                };
                let rec = bench_one(sweep.loss, q, batch, repeats, seed)?;
                times.push(rec.median_s);
                records.push(rec);
            }
            let xs: Vec<f64> = sweep.sizes.iter().map(|&s| s as f64).collect();
            fits.push(ScalingFit {
                loss: sweep.loss,
                variable: sweep.variable,
                fixed: sweep.fixed,
                sizes: sweep.sizes.clone(),
                exponent: loglog_slope(&xs, &times)?,
            });
        }
        Ok(BenchReport { records, fits })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.7)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.7).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn memory_model() {
        assert_eq!(analytic_memory(Regularizer::Sfrik, 4096, 256), (8 * 256 * 256, "gram"));
        assert_eq!(analytic_memory(Regularizer::Vicreg, 4096, 256), (8 * 4096 * 4096, "covariance"));
    }

    #[test]
    fn small_sweep_runs() {
        let sweeps = [Sweep {
            loss: Regularizer::Auh,
            variable: Variable::Batch,
            fixed: 8,
            sizes: vec![4, 8, 16, 32],
        }];
        let report = run_sweeps(&sweeps, 5, 0).unwrap();
        assert_eq!(report.records.len(), 4);
        assert!(report.records.iter().all(|r| r.min_s <= r.median_s && r.median_s <= r.max_s));
        let csv = report.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        assert!(report.exponent(Regularizer::Auh, Variable::Batch).is_some());
        assert!(bench_one(Regularizer::Sfrik, 4, 4, 2, 0).is_err());
    }
}
