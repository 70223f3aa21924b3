//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spherical_mmd::batch::EmbeddingBatch;
use spherical_mmd::config::ExperimentConfig;
use spherical_mmd::kernels::KernelSpec as CoreSpec;
use spherical_mmd::losses::{objective as core_objective, LossReport, LossWeights, Regularizer};
use spherical_mmd::{harmonics, optimizer, sampling, sphere_math, verify as core_verify};

fn err(e: spherical_mmd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let q = rows.first().map_or(0, Vec::len);
    if n == 0 || q == 0 || rows.iter().any(|r| r.len() != q) {
        return Err(PyValueError::new_err("expected a non-empty list of equal-length rows"));
    }
    Ok(DMatrix::from_fn(n, q, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn report_dict<'py>(py: Python<'py>, r: &LossReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("terms", r.terms.clone().into_iter().collect::<Vec<_>>())?;
    d.set_item("grad_norm", r.grad_norm)?;
    let grads: Vec<Vec<Vec<f64>>> = r.gradients.iter().map(to_rows).collect();
    d.set_item("gradients", grads)?;
    Ok(d)
}

/// A rotation-invariant kernel on the sphere.
#[pyclass(frozen, name = "KernelSpec")]
struct PyKernelSpec {
    inner: CoreSpec,
}

#[pymethods]
impl PyKernelSpec {
    #[staticmethod]
    fn truncated(q: usize, coefficients: Vec<(usize, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSpec::truncated(q, &coefficients).map_err(err)?,
        })
    }

    /// Centered truncated kernel with weights `b1, b2, b3`.
    #[staticmethod]
    #[pyo3(signature = (q, b1, b2, b3 = 0.0))]
    fn sfrik(q: usize, b1: f64, b2: f64, b3: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSpec::sfrik(q, b1, b2, b3).map_err(err)?,
        })
    }

    #[staticmethod]
    fn rbf(q: usize, sigma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSpec::rbf(q, sigma).map_err(err)?,
        })
    }

    #[staticmethod]
    fn gendist(q: usize, s: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSpec::gendist(q, s).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("kernel serializes")
    }

    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    fn centered(&self) -> Self {
        Self {
            inner: self.inner.centered(),
        }
    }

    fn eval(&self, t: f64) -> PyResult<f64> {
        self.inner.eval(t).map_err(err)
    }

    fn coefficients(&self, max_order: usize) -> PyResult<Vec<f64>> {
        self.inner.coefficients_up_to(max_order).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("KernelSpec({})", self.to_json())
    }
}

/// Orthonormal order-1 and order-2 harmonics and the matching feature map.
#[pyclass(frozen, name = "HarmonicBasis")]
struct PyHarmonicBasis {
    inner: harmonics::HarmonicBasis,
}

#[pymethods]
impl PyHarmonicBasis {
    #[new]
    fn new(q: usize, b1: f64, b2: f64) -> PyResult<Self> {
        Ok(Self {
            inner: harmonics::HarmonicBasis::build(q, b1, b2).map_err(err)?,
        })
    }

    fn harmonics(&self, order: usize, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.harmonics(order, &z).map_err(err)?.iter().copied().collect())
    }

    fn feature_map(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.feature_map(&z).map_err(err)?.iter().copied().collect())
    }

    fn mmd_via_moments(&self, z: Vec<Vec<f64>>) -> PyResult<f64> {
        let batch = EmbeddingBatch::new(to_matrix(z)?).map_err(err)?;
        self.inner.mmd_via_moments(&batch).map_err(err)
    }

    fn change_of_basis(&self, order: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(self.inner.change_of_basis(order).map_err(err)?))
    }
}

#[pyfunction]
fn legendre(q: usize, l: usize, t: f64) -> PyResult<f64> {
    sphere_math::legendre(q, l, t).map_err(err)
}

#[pyfunction]
fn harmonic_space_dim(q: usize, l: usize) -> PyResult<f64> {
    sphere_math::harmonic_space_dim(q, l).map_err(err)
}

#[pyfunction]
fn sample_uniform_sphere(q: usize, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(sampling::sample_uniform_sphere(q, n, seed).map_err(err)?.matrix()))
}

/// `(estimate, standard error)` of the squared MMD between two samples.
#[pyfunction]
fn mmd_two_sample(spec: &PyKernelSpec, z: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let est = sampling::mmd_two_sample_se(&spec.inner, &to_matrix(z)?, &to_matrix(w)?).map_err(err)?;
    Ok((est.estimate, est.std_error))
}

/// `(||mean||, ||second moment - I/q||_F)` of unit rows.
#[pyfunction]
fn moment_stats(z: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let batch = EmbeddingBatch::new(to_matrix(z)?).map_err(err)?;
    let s = harmonics::embedding_moment_stats(&batch);
    Ok((s.mean_norm, s.autocorr_deviation))
}

#[pyfunction]
fn uniformity_loss<'py>(py: Python<'py>, spec: &PyKernelSpec, z: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let batch = EmbeddingBatch::unnormalized(to_matrix(z)?).map_err(err)?;
    report_dict(py, &spherical_mmd::losses::uniformity_loss(&spec.inner, &batch).map_err(err)?)
}

/// `λ ℓ_a + μ ℓ_r` for `loss` in {"sfrik", "auh", "simclr", "vicreg"}.
/// `weights` is a JSON object with any of the loss-weight fields.
#[pyfunction]
#[pyo3(signature = (loss, spec, z1, z2, weights = None))]
fn objective<'py>(
    py: Python<'py>,
    loss: &str,
    spec: &PyKernelSpec,
    z1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
    weights: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let reg: Regularizer = loss.parse().map_err(err)?;
    let w: LossWeights = match weights {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => LossWeights::default(),
    };
    let a = EmbeddingBatch::unnormalized(to_matrix(z1)?).map_err(err)?;
    let b = EmbeddingBatch::unnormalized(to_matrix(z2)?).map_err(err)?;
    report_dict(py, &core_objective(reg, &w, &spec.inner, &a, &b).map_err(err)?)
}

/// Runs an experiment given as TOML text. Returns the trajectory CSV and
/// the final embeddings of both views.
#[pyfunction]
#[pyo3(signature = (config_toml, seed = None))]
fn minimize<'py>(py: Python<'py>, config_toml: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::from_toml(config_toml).map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let resolved = cfg.resolve().map_err(err)?;
    let data = optimizer::generate_two_view_data(&resolved.data).map_err(err)?;
    let traj = optimizer::minimize(&resolved.optim, &data).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("trajectory_csv", traj.to_csv())?;
    d.set_item("step_size", traj.step_size)?;
    d.set_item("z1", to_rows(&traj.z1))?;
    d.set_item("z2", to_rows(&traj.z2))?;
    Ok(d)
}

/// Self-check results as `(name, passed, measured, tolerance)` tuples.
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn verify(suite: &str, seed: u64) -> PyResult<Vec<(String, bool, f64, f64)>> {
    Ok(core_verify::run_suite(suite, seed)
        .map_err(err)?
        .into_iter()
        .map(|c| {
            let ok = c.passed();
            (c.name, ok, c.measured, c.tolerance)
        })
        .collect())
}

#[pymodule]
fn spherical_mmd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernelSpec>()?;
    m.add_class::<PyHarmonicBasis>()?;
    m.add_function(wrap_pyfunction!(legendre, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_space_dim, m)?)?;
    m.add_function(wrap_pyfunction!(sample_uniform_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(moment_stats, m)?)?;
    m.add_function(wrap_pyfunction!(uniformity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
