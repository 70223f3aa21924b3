//! Rotation-invariant kernels on the hypersphere and the squared maximum
//! mean discrepancy to the uniform distribution.
//!
//! The crate evaluates Legendre (Gegenbauer) expansions of dot-product
//! kernels, the biased MMD estimator used as a uniformity loss, its
//! explicit spherical-harmonic feature-map form, the usual alignment and
//! regularization losses with analytic gradients, and a projected gradient
//! optimizer for embeddings on `S^{q-1}`.

pub mod error;
pub mod quadrature;
pub mod sphere_math;
pub mod kernels;
pub mod batch;
pub mod harmonics;
pub mod io;
pub mod losses;
pub mod sampling;
pub mod optimizer;
pub mod presets;
pub mod config;
pub mod verify;
pub mod bench;
pub mod cli;

pub use error::{Error, Result};
