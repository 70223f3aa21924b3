//! TOML experiment documents. Unknown keys anywhere are errors.
//!
//! ```toml
//! seed = 7
//! preset = "imagenet-q8192-l2"   # optional; fills kernel and weights
//!
//! [kernel]                       # optional when a preset is given
//! q = 16
//! family = "truncated"
//! coefficients = [[1, 1.0], [2, 20.0]]
//! centered = true
//!
//! [weights]                      # optional; defaults or preset values
//! lambda = 7.8125
//! mu = 0.5
//!
//! [optim]
//! loss = "sfrik"
//! steps = 2000
//! eval_every = 50
//!
//! [data]
//! q = 16
//! n = 128
//! clusters = 1
//! cluster_spread = 1.0
//! noise_angle = 0.0
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::losses::{LossWeights, Regularizer};
use crate::optimizer::{GeneratorParams, Layout, OptimConfig};
use crate::presets::find_preset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub loss: Regularizer,
    pub steps: usize,
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub reference_samples: Option<usize>,
}

/// Generator parameters without the seed, which is global.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub q: usize,
    pub n: usize,
    #[serde(default)]
    pub clusters: usize,
    #[serde(default)]
    pub cluster_spread: f64,
    #[serde(default)]
    pub noise_angle: f64,
    #[serde(default)]
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub trajectory: String,
    pub summary: String,
    pub embeddings_prefix: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trajectory: "trajectory.csv".into(),
            summary: "summary.json".into(),
            embeddings_prefix: "final".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub weights: Option<LossWeights>,
    pub optim: OptimSection,
    pub data: DataSection,
    #[serde(default)]
    pub output: OutputPaths,
}

/// Everything a run needs, after defaults and presets are applied.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub optim: OptimConfig,
    pub data: GeneratorParams,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let preset = self.preset.as_deref().map(find_preset).transpose()?;
        let scaled = preset.map(|p| p.desk_scaled(self.data.q)).transpose()?;
        let kernel = match (&self.kernel, &scaled) {
            (Some(k), _) => k.clone(),
            (None, Some((_, k))) => k.clone(),
            (None, None) => {
                return Err(Error::Config("either [kernel] or preset is required".into()))
            }
        };
        if kernel.q() != self.data.q {
            return Err(Error::Config(format!(
                "kernel q = {} differs from data q = {}",
                kernel.q(),
                self.data.q
            )));
        }
        let weights = match (self.weights, &scaled) {
            (Some(w), _) => w,
            (None, Some((w, _))) => *w,
            (None, None) => LossWeights::default(),
        };
        if let Some(p) = preset {
            if p.loss != self.optim.loss {
                return Err(Error::Config(format!(
                    "preset {} is for loss {}, config asks for {}",
                    p.name,
                    p.loss.name(),
                    self.optim.loss.name()
                )));
            }
        }

        let mut optim = OptimConfig::new(self.optim.loss, weights, kernel, self.optim.steps);
        optim.step_size = self.optim.step_size;
        if let Some(e) = self.optim.eval_every {
            optim.eval_every = e;
        }
        if let Some(m) = self.optim.reference_samples {
            optim.reference_samples = m;
        }
        optim.seed = self.seed.wrapping_add(1);
        optim.validate()?;

        let data = GeneratorParams {
            q: self.data.q,
            n: self.data.n,
            clusters: self.data.clusters,
            cluster_spread: self.data.cluster_spread,
            noise_angle: self.data.noise_angle,
            seed: self.seed,
            layout: self.data.layout,
        };
        data.validate()?;
        Ok(ResolvedExperiment {
            optim,
            data,
            output: self.output.clone(),
        })
    }
}
