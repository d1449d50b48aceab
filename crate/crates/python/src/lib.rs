//! Python bindings. Vectors cross the boundary as `list[float]` and
//! matrices as row-major `list[list[float]]`.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use genprior::baselines::{self, GuideOptions, VirtualNoise};
use genprior::experiments::{self, ExperimentConfig};
use genprior::laplace::{laplace_fit as fit_laplace, marginal_pixel_std, ExpansionOptions};
use genprior::latent::{LatentInit, LatentOptions};
use genprior::{forward_model, generator, prior_oracle, synthetic, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vec_in(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn vec_out(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn mat_in(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

fn mat_out(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `y = Ax + σε` with known σ².
#[pyclass(name = "LinearModel", module = "genprior_py", from_py_object)]
#[derive(Clone)]
pub struct PyLinearModel {
    inner: forward_model::LinearModel,
}

#[pymethods]
impl PyLinearModel {
    #[new]
    fn new(a: Vec<Vec<f64>>, sigma2: f64) -> PyResult<Self> {
        let inner = forward_model::LinearModel::new(mat_in(a)?, sigma2).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Gaussian blur of precision `eta` on a `height × width` image.
    #[staticmethod]
    #[pyo3(signature = (eta, height, width, sigma2, radius = forward_model::DEFAULT_BLUR_RADIUS))]
    fn blur(eta: f64, height: usize, width: usize, sigma2: f64, radius: usize) -> PyResult<Self> {
        let inner = forward_model::build_blur(eta, height, width, radius)
            .and_then(|b| b.into_model(sigma2))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.n(), self.inner.d())
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        mat_out(self.inner.a())
    }

    fn apply(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(vec_out(&self.inner.apply(&vec_in(x)).map_err(to_py)?))
    }

    /// Draws `y = Ax + σε` from the seeded noise stream.
    fn observe(&self, x: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
        Ok(vec_out(&forward_model::observe(&self.inner, &vec_in(x), seed).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("LinearModel(n={}, d={}, sigma2={:e})", self.inner.n(), self.inner.d(), self.inner.sigma2())
    }
}

/// Probabilistic generator `x | z ~ N(g(z), Γ(z))`, `z ~ N(0, I)`.
#[pyclass(name = "Generator", module = "genprior_py", from_py_object)]
#[derive(Clone)]
pub struct PyGenerator {
    inner: generator::GeneratorNet,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: generator::load_weights(path).map_err(to_py)?,
        })
    }

    /// The bundled 8×8 synthetic generator.
    #[staticmethod]
    fn suite() -> PyResult<Self> {
        Ok(Self {
            inner: synthetic::suite_generator().map_err(to_py)?,
        })
    }

    /// `g(z) = Wz + b` with `Γ = γI`.
    #[staticmethod]
    #[pyo3(signature = (w, b, gamma, eps_gamma = 1e-8))]
    fn affine(w: Vec<Vec<f64>>, b: Vec<f64>, gamma: f64, eps_gamma: f64) -> PyResult<Self> {
        Ok(Self {
            inner: generator::GeneratorNet::affine(mat_in(w)?, vec_in(b), gamma, eps_gamma).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        generator::save_weights(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn mean(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(vec_out(&self.inner.g_mean(&vec_in(z)).map_err(to_py)?))
    }

    fn jacobian(&self, z: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(mat_out(&self.inner.jacobian(&vec_in(z)).map_err(to_py)?))
    }

    /// `Γ(z)` as a dense matrix.
    fn gamma(&self, z: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(mat_out(&self.inner.gamma(&vec_in(z)).map_err(to_py)?.to_dense()))
    }

    fn sample(&self, seed: u64) -> PyResult<Vec<f64>> {
        Ok(vec_out(&self.inner.sample_prior_draw(seed).map_err(to_py)?))
    }

    fn __repr__(&self) -> String {
        format!("Generator(latent_dim={}, output_dim={})", self.inner.latent_dim(), self.inner.output_dim())
    }
}

#[pyfunction]
#[pyo3(signature = (x, xhat, peak = 1.0))]
fn psnr(x: Vec<f64>, xhat: Vec<f64>, peak: f64) -> PyResult<f64> {
    if x.len() != xhat.len() {
        return Err(PyValueError::new_err("psnr: length mismatch"));
    }
    Ok(forward_model::psnr(&vec_in(x), &vec_in(xhat), peak))
}

/// Laplace posterior: mean, marginal pixel std, expansion point, trace.
#[pyfunction]
fn laplace_fit<'py>(
    py: Python<'py>,
    model: &PyLinearModel,
    y: Vec<f64>,
    generator: &PyGenerator,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = fit_laplace(&model.inner, &vec_in(y), &generator.inner, &ExpansionOptions::default()).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mean", vec_out(&fit.posterior.mean))?;
    out.set_item("pixel_std", vec_out(&marginal_pixel_std(&fit.posterior)))?;
    out.set_item("z0", vec_out(&fit.posterior.prior.z0))?;
    out.set_item("converged", fit.trace.converged())?;
    out.set_item("iterations", fit.trace.iterations)?;
    out.set_item("log_integrand", fit.trace.log_integrand.clone())?;
    Ok(out)
}

/// Latent MAP `z` and its image `g(z)`.
#[pyfunction]
fn latent_map<'py>(
    py: Python<'py>,
    model: &PyLinearModel,
    y: Vec<f64>,
    generator: &PyGenerator,
) -> PyResult<Bound<'py, PyDict>> {
    let post = genprior::LatentPosterior::new(&model.inner, &generator.inner).map_err(to_py)?;
    let est = post
        .estimate(&vec_in(y), &LatentInit::LeastSquares, &LatentOptions::default())
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("x", vec_out(&est.x))?;
    out.set_item("z", vec_out(&est.z))?;
    out.set_item("converged", est.diagnostics.converged)?;
    out.set_item("grad_norm", est.diagnostics.grad_norm)?;
    Ok(out)
}

/// Tikhonov solution at the λ on the default grid closest to `x_true`.
#[pyfunction]
fn l2_oracle<'py>(py: Python<'py>, model: &PyLinearModel, y: Vec<f64>, x_true: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let fit = baselines::l2_oracle(model.inner.a(), &vec_in(y), &vec_in(x_true), &baselines::default_lambda_grid())
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("x", vec_out(&fit.x))?;
    out.set_item("lambda", fit.lambda)?;
    out.set_item("error", fit.error)?;
    Ok(out)
}

/// Virtual-data choice between the Laplace and latent estimates.
#[pyfunction]
#[pyo3(signature = (model, y, generator, seed, noiseless = false, cross_validated = false))]
fn guide<'py>(
    py: Python<'py>,
    model: &PyLinearModel,
    y: Vec<f64>,
    generator: &PyGenerator,
    seed: u64,
    noiseless: bool,
    cross_validated: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = GuideOptions {
        virtual_noise: if noiseless { VirtualNoise::Noiseless } else { VirtualNoise::Fresh },
        cross_validated,
        ..GuideOptions::default()
    };
    let v = baselines::guide(&model.inner, &vec_in(y), &generator.inner, &opts, seed).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item(
        "chosen",
        match v.chosen {
            baselines::GuideChoice::Laplace => "laplace",
            baselines::GuideChoice::Latent => "latent",
        },
    )?;
    out.set_item("err_laplace", v.err_laplace)?;
    out.set_item("err_latent", v.err_latent)?;
    out.set_item("x", vec_out(v.estimate()))?;
    Ok(out)
}

/// Monte-Carlo `log π(x)` and its standard error.
#[pyfunction]
fn mc_log_prior(generator: &PyGenerator, x: Vec<f64>, n_samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let est = prior_oracle::mc_log_prior(&generator.inner, &vec_in(x), n_samples, seed).map_err(to_py)?;
    Ok((est.log_value, est.std_error))
}

/// Runs a sweep from TOML text; returns the output paths and counts.
#[pyfunction]
#[pyo3(signature = (config_toml, output_dir = None))]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str, output_dir: Option<String>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = ExperimentConfig::from_toml_str(config_toml).map_err(to_py)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir.into();
    }
    let summary = py.detach(|| experiments::run_experiment(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("records", summary.output.records.len())?;
    out.set_item("failures", summary.output.failures.len())?;
    out.set_item("csv", summary.csv_path.display().to_string())?;
    out.set_item("manifest", summary.manifest_path.display().to_string())?;
    Ok(out)
}

/// Loads a weights file; raises on any schema violation.
#[pyfunction]
fn validate_weights(path: &str) -> PyResult<(usize, usize)> {
    let net = generator::load_weights(path).map_err(to_py)?;
    Ok((net.latent_dim(), net.output_dim()))
}

#[pymodule]
fn genprior_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearModel>()?;
    m.add_class::<PyGenerator>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_fit, m)?)?;
    m.add_function(wrap_pyfunction!(latent_map, m)?)?;
    m.add_function(wrap_pyfunction!(l2_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(guide, m)?)?;
    m.add_function(wrap_pyfunction!(mc_log_prior, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(validate_weights, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
