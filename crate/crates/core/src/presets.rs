//! Named hyperparameter settings and their desk-scale versions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::losses::{LossWeights, Regularizer};

/// A published setting at its original embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub loss: Regularizer,
    pub q: usize,
    pub lambda: f64,
    pub mu: f64,
    /// `(b_1, b_2, b_3)`; only used by SFRIK.
    pub b: [f64; 3],
    pub tau: f64,
    pub t_scale: f64,
    pub nu: f64,
}

const fn sfrik(name: &'static str, q: usize, lambda: f64, b: [f64; 3]) -> Preset {
    Preset {
        name,
        loss: Regularizer::Sfrik,
        q,
        lambda,
        mu: 0.5,
        b,
        tau: 0.15,
        t_scale: 2.5,
        nu: 1.0,
    }
}

const fn baseline(name: &'static str, loss: Regularizer, q: usize, lambda: f64, mu: f64) -> Preset {
    Preset {
        name,
        loss,
        q,
        lambda,
        mu,
        b: [1.0, 1.0, 0.0],
        tau: 0.15,
        t_scale: 2.5,
        nu: 1.0,
    }
}

pub const PRESETS: &[Preset] = &[
    sfrik("imagenet-q8192-l2", 8192, 4000.0, [1.0, 20.0, 0.0]),
    sfrik("imagenet-q16384-l2", 16384, 20000.0, [1.0, 40.0, 0.0]),
    sfrik("imagenet-q32768-l2", 32768, 40000.0, [1.0, 40.0, 0.0]),
    sfrik("imagenet-q32768-l3", 32768, 40000.0, [1.0, 40.0, 40.0]),
    sfrik("in20-l1-q8192", 8192, 10000.0, [1.0, 0.0, 0.0]),
    sfrik("in20-l2-q1024", 1024, 400.0, [1.0, 40.0, 0.0]),
    sfrik("in20-l2-q2048", 2048, 400.0, [1.0, 40.0, 0.0]),
    sfrik("in20-l2-q4096", 4096, 1000.0, [1.0, 40.0, 0.0]),
    sfrik("in20-l2-q8192", 8192, 2000.0, [1.0, 20.0, 0.0]),
    sfrik("in20-l3-q8192", 8192, 4000.0, [1.0, 40.0, 40.0]),
    baseline("in20-simclr", Regularizer::Simclr, 8192, 1.0, 0.5),
    baseline("in20-auh-q1024", Regularizer::Auh, 1024, 400.0, 0.5),
    baseline("in20-auh-q2048", Regularizer::Auh, 2048, 1000.0, 0.5),
    baseline("in20-auh-q4096", Regularizer::Auh, 4096, 2000.0, 0.5),
    baseline("in20-auh-q8192", Regularizer::Auh, 8192, 3000.0, 0.5),
    baseline("in20-vicreg-q1024", Regularizer::Vicreg, 1024, 4.0, 10.0),
    baseline("in20-vicreg-q2048", Regularizer::Vicreg, 2048, 4.0, 4.0),
    baseline("in20-vicreg-q4096", Regularizer::Vicreg, 4096, 10.0, 10.0),
    baseline("in20-vicreg-q8192", Regularizer::Vicreg, 8192, 10.0, 10.0),
];

pub fn find_preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::Config(format!("unknown preset {name:?}; known: {}", names.join(", ")))
    })
}

impl Preset {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            mu: self.mu,
            tau: self.tau,
            t_scale: self.t_scale,
            nu: self.nu,
            ..LossWeights::default()
        }
    }

    /// Centered truncated kernel in dimension `q`.
    pub fn kernel(&self, q: usize) -> Result<KernelSpec> {
        KernelSpec::sfrik(q, self.b[0], self.b[1], self.b[2])
    }

    /// Weights for dimension `q`: the alignment weight is scaled by
    /// `q / q_preset` (the published weights grow roughly linearly with the
    /// dimension), all others are kept.
    pub fn desk_scaled(&self, q: usize) -> Result<(LossWeights, KernelSpec)> {
        let mut w = self.weights();
        w.lambda = self.lambda * q as f64 / self.q as f64;
        Ok((w, self.kernel(q)?))
    }
}
