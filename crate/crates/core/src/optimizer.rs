//! Synthetic two-view data and projected gradient descent on the
//! embeddings themselves.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::harmonics::{embedding_moment_stats, MomentStats};
use crate::io::format_f64;
use crate::kernels::KernelSpec;
use crate::losses::{objective, LossReport, LossWeights, Regularizer};
use crate::sampling::{row_rng, uniform_point, McEstimate, UniformReference, SE_BLOCKS};

const STREAM_CENTER: u64 = 1 << 48;
const STREAM_LATENT: u64 = 2 << 48;
const STREAM_VIEW1: u64 = 3 << 48;
const STREAM_VIEW2: u64 = 4 << 48;
const STREAM_FRAME: u64 = 5 << 48;

/// Loss must stay below this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// How latent points are laid out before view noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Uniform points (`clusters = 0`) or points scattered around
    /// `clusters` uniform centers.
    #[default]
    Clustered,
    /// Point `i` sits near column `i mod q` of a random orthonormal frame,
    /// so `2q` points give autocorrelation `I/q` and mean norm `1/√q`.
    Frame,
}

/// Parameters of the synthetic two-view generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    pub q: usize,
    pub n: usize,
    pub clusters: usize,
    /// Largest angle (radians) between a latent point and its anchor.
    pub cluster_spread: f64,
    /// Largest angle (radians) between a view and its latent point.
    pub noise_angle: f64,
    pub seed: u64,
    pub layout: Layout,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            q: 16,
            n: 128,
            clusters: 0,
            cluster_spread: 0.3,
            noise_angle: 0.1,
            seed: 0,
            layout: Layout::Clustered,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.q < 3 {
            return Err(Error::Config(format!("q = {} must be >= 3", self.q)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        for (name, v) in [
            ("cluster_spread", self.cluster_spread),
            ("noise_angle", self.noise_angle),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Paired views of the same latent points.
#[derive(Debug, Clone)]
pub struct TwoViewBatch {
    pub z1: EmbeddingBatch,
    pub z2: EmbeddingBatch,
    pub latent: DMatrix<f64>,
    pub params: GeneratorParams,
}

impl TwoViewBatch {
    /// Views without provenance, e.g. read from files.
    pub fn from_views(z1: EmbeddingBatch, z2: EmbeddingBatch) -> Result<Self> {
        if z1.len() != z2.len() || z1.dim() != z2.dim() {
            return Err(Error::Shape("views must have equal shapes".into()));
        }
        let params = GeneratorParams {
            q: z1.dim(),
            n: z1.len(),
            ..GeneratorParams::default()
        };
        Ok(Self {
            latent: z1.matrix().clone(),
            z1,
            z2,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.z1.dim()
    }

    pub fn len(&self) -> usize {
        self.z1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z1.is_empty()
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= norm;
    }
}

/// Rotates unit `x` by `angle` inside a random 2-plane containing `x`.
fn rotate_in_random_plane(x: &[f64], angle: f64, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let mut u: Vec<f64> = loop {
        let g: Vec<f64> = x.iter().map(|_| rng.sample(StandardNormal)).collect();
        let dot: f64 = g.iter().zip(x).map(|(a, b)| a * b).sum();
        let u: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - dot * b).collect();
        if u.iter().map(|v| v * v).sum::<f64>() > 1e-20 {
            break u;
        }
    };
    normalize(&mut u);
    let (s, c) = angle.sin_cos();
    let mut out: Vec<f64> = x.iter().zip(&u).map(|(a, b)| c * a + s * b).collect();
    normalize(&mut out);
    out
}

fn random_frame(q: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = row_rng(seed, STREAM_FRAME);
    let g = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// `n` latent points and two noisy views of each.
pub fn generate_two_view_data(params: &GeneratorParams) -> Result<TwoViewBatch> {
    params.validate()?;
    let (q, n, seed) = (params.q, params.n, params.seed);
    let anchors: Vec<Vec<f64>> = match params.layout {
        Layout::Clustered if params.clusters == 0 => Vec::new(),
        Layout::Clustered => (0..params.clusters as u64)
            .map(|k| uniform_point(&mut row_rng(seed, STREAM_CENTER | k), q))
            .collect(),
        Layout::Frame => {
            let frame = random_frame(q, seed);
            frame.column_iter().map(|c| c.iter().copied().collect()).collect()
        }
    };

    let mut latent = DMatrix::zeros(n, q);
    let mut z1 = DMatrix::zeros(n, q);
    let mut z2 = DMatrix::zeros(n, q);
    for i in 0..n {
        let mut rng = row_rng(seed, STREAM_LATENT | i as u64);
        let x = if anchors.is_empty() {
            uniform_point(&mut rng, q)
        } else {
            let angle = rng.random::<f64>() * params.cluster_spread;
            rotate_in_random_plane(&anchors[i % anchors.len()], angle, &mut rng)
        };
        for (out, stream) in [(&mut z1, STREAM_VIEW1), (&mut z2, STREAM_VIEW2)] {
            let mut rng = row_rng(seed, stream | i as u64);
            let angle = rng.random::<f64>() * params.noise_angle;
            let v = rotate_in_random_plane(&x, angle, &mut rng);
            out.row_mut(i).copy_from_slice(&v);
        }
        latent.row_mut(i).copy_from_slice(&x);
    }
    Ok(TwoViewBatch {
        z1: EmbeddingBatch::new(z1)?,
        z2: EmbeddingBatch::new(z2)?,
        latent,
        params: params.clone(),
    })
}

/// `g - (g·z) z`: the component of `g` tangent to the sphere at unit `z`.
pub fn tangent_project(z: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if z.len() != g.len() {
        return Err(Error::Shape("z and g must have equal length".into()));
    }
    let dot: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
    Ok(g.iter().zip(z).map(|(gi, zi)| gi - dot * zi).collect())
}

fn project_rows(z: &DMatrix<f64>, g: &mut DMatrix<f64>) {
    for (i, zi) in z.row_iter().enumerate() {
        let dot = zi.dot(&g.row(i));
        let mut gi = g.row_mut(i);
        gi -= zi * dot;
    }
}

fn normalize_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
}

fn default_eval_every() -> usize {
    50
}

fn default_reference_samples() -> usize {
    4096
}

/// Settings of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    /// Constant step; `None` selects `0.5 / (λ + μ Σ b_l)`.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub steps: usize,
    pub loss: Regularizer,
    #[serde(default)]
    pub weights: LossWeights,
    /// Kernel of the uniformity term and of the distance-to-uniform
    /// estimate. Its `b_0` is ignored.
    pub kernel: KernelSpec,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Seed of the uniform reference sample.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reference_samples")]
    pub reference_samples: usize,
}

impl OptimConfig {
    pub fn new(loss: Regularizer, weights: LossWeights, kernel: KernelSpec, steps: usize) -> Self {
        Self {
            step_size: None,
            steps,
            loss,
            weights,
            kernel,
            eval_every: default_eval_every(),
            seed: 0,
            reference_samples: default_reference_samples(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("step_size = {eta} must be > 0")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.reference_samples < SE_BLOCKS {
            return Err(Error::Config(format!(
                "reference_samples must be >= {SE_BLOCKS}"
            )));
        }
        self.weights.validate()
    }

    /// `0.5 / (λ + μ Σ_{l>=1} b_l)`.
    pub fn default_step_size(&self) -> Result<f64> {
        let total = self.kernel.centered().eval(1.0)?;
        Ok(0.5 / (self.weights.lambda + self.weights.mu * total))
    }

    pub fn effective_step_size(&self) -> Result<f64> {
        match self.step_size {
            Some(eta) => Ok(eta),
            None => self.default_step_size(),
        }
    }
}

/// One checkpoint of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub total: f64,
    pub align: f64,
    /// Regularization term `ℓ_r` (the summed uniformity terms for SFRIK).
    pub unif: f64,
    pub mean_norm: f64,
    pub autocorr_dev: f64,
    pub mc_mmd: f64,
    pub mc_mmd_se: f64,
}

impl TrajectoryRecord {
    fn is_finite(&self) -> bool {
        [
            self.total,
            self.align,
            self.unif,
            self.mean_norm,
            self.autocorr_dev,
            self.mc_mmd,
            self.mc_mmd_se,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub const TRAJECTORY_HEADER: &str = "step,total,align,unif,mean_norm,autocorr_dev,mc_mmd,mc_mmd_se";

/// Checkpoints, the loss after every step, and the final embeddings.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    /// Objective value before step 1, after step 1, ..., after the last step.
    pub loss_history: Vec<f64>,
    pub step_size: f64,
    pub z1: DMatrix<f64>,
    pub z2: DMatrix<f64>,
}

/// Summary written next to a trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub loss: Regularizer,
    pub steps: usize,
    pub step_size: f64,
    pub initial: TrajectoryRecord,
    #[serde(rename = "final")]
    pub last: TrajectoryRecord,
}

impl Trajectory {
    pub fn first(&self) -> &TrajectoryRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &TrajectoryRecord {
        self.records.last().expect("trajectory has records")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let fields = [
                r.total,
                r.align,
                r.unif,
                r.mean_norm,
                r.autocorr_dev,
                r.mc_mmd,
                r.mc_mmd_se,
            ];
            out.push_str(&r.step.to_string());
            for v in fields {
                out.push(',');
                out.push_str(&format_f64(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, loss: Regularizer) -> RunSummary {
        RunSummary {
            loss,
            steps: self.loss_history.len() - 1,
            step_size: self.step_size,
            initial: *self.first(),
            last: *self.last(),
        }
    }
}

fn views(
    regularizer: Regularizer,
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    if regularizer.normalized() {
        Ok((EmbeddingBatch::new(z1.clone())?, EmbeddingBatch::new(z2.clone())?))
    } else {
        Ok((
            EmbeddingBatch::unnormalized(z1.clone())?,
            EmbeddingBatch::unnormalized(z2.clone())?,
        ))
    }
}

/// Both views stacked and scaled to unit norm, for statistics.
fn pooled_unit(z1: &EmbeddingBatch, z2: &EmbeddingBatch) -> Result<EmbeddingBatch> {
    EmbeddingBatch::normalizing(z1.stacked(z2)?.into_matrix())
}

fn record_from(
    step: usize,
    report: &LossReport,
    stats: MomentStats,
    mmd: McEstimate,
) -> TrajectoryRecord {
    TrajectoryRecord {
        step,
        total: report.value,
        align: report.terms["align"],
        unif: report.terms["reg"],
        mean_norm: stats.mean_norm,
        autocorr_dev: stats.autocorr_deviation,
        mc_mmd: mmd.estimate,
        mc_mmd_se: mmd.std_error,
    }
}

/// Objective terms, pooled moment statistics and the distance-to-uniform
/// estimate (against `reference`) for the current views.
pub fn evaluate_checkpoint(
    config: &OptimConfig,
    step: usize,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    reference: &UniformReference,
) -> Result<TrajectoryRecord> {
    let spec = config.kernel.centered();
    let report = objective(config.loss, &config.weights, &spec, z1, z2)?;
    checkpoint_with_report(step, &report, z1, z2, reference)
}

fn checkpoint_with_report(
    step: usize,
    report: &LossReport,
    z1: &EmbeddingBatch,
    z2: &EmbeddingBatch,
    reference: &UniformReference,
) -> Result<TrajectoryRecord> {
    let pooled = pooled_unit(z1, z2)?;
    let stats = embedding_moment_stats(&pooled);
    let mmd = reference.mmd(pooled.matrix())?;
    let record = record_from(step, report, stats, mmd);
    if !record.is_finite() {
        return Err(Error::Numerical(format!("non-finite checkpoint at step {step}")));
    }
    Ok(record)
}

/// Iterates `z ← normalize(z - η P_z ∇ℓ)` on both views (plain gradient
/// steps for VICReg, whose embeddings are not normalized).
pub fn minimize(config: &OptimConfig, data: &TwoViewBatch) -> Result<Trajectory> {
    config.validate()?;
    let spec = config.kernel.centered();
    if spec.q() != data.dim() {
        return Err(Error::Shape(format!(
            "kernel has q = {}, data has q = {}",
            spec.q(),
            data.dim()
        )));
    }
    let eta = config.effective_step_size()?;
    let reference = UniformReference::new(&spec, config.reference_samples, config.seed)?;
    let normalized = config.loss.normalized();

    let mut z1 = data.z1.matrix().clone();
    let mut z2 = data.z2.matrix().clone();
    let mut records = Vec::new();
    let mut history = Vec::with_capacity(config.steps + 1);
    let mut initial = 0.0;

    for step in 0..=config.steps {
        let (b1, b2) = views(config.loss, &z1, &z2)?;
        let report = objective(config.loss, &config.weights, &spec, &b1, &b2)?;
        if !report.value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        if step == 0 {
            initial = report.value;
        } else if report.value > DIVERGENCE_FACTOR * initial.abs().max(1e-12) {
            return Err(Error::Diverged {
                step,
                loss: report.value,
                initial,
            });
        }
        history.push(report.value);
        if step % config.eval_every == 0 || step == config.steps {
            records.push(checkpoint_with_report(step, &report, &b1, &b2, &reference)?);
        }
        if step == config.steps {
            break;
        }
        let mut grads = report.gradients.into_iter();
        for z in [&mut z1, &mut z2] {
            let mut g = grads.next().expect("one gradient per view");
            if normalized {
                project_rows(z, &mut g);
                *z -= g * eta;
                normalize_rows(z);
            } else {
                *z -= g * eta;
            }
        }
    }

    Ok(Trajectory {
        records,
        loss_history: history,
        step_size: eta,
        z1,
        z2,
    })
}
