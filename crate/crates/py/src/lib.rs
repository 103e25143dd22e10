//! Python bindings: activations, the saddle-point solver, networks,
//! training and the image-reconstruction demo.
//!
//! Vectors cross the boundary as lists of floats; matrices as lists of
//! rows.

use dpbn_core::data_io::{read_model, write_model, GrayImage};
use dpbn_core::network::{init_params, NetworkConfig};
use dpbn_core::training::{self, Decoder, GradMode, Hyperparams};
use dpbn_core::{ActivationKind, DenseMatrix, LinearMap, SaddleOptions};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: dpbn_core::Error) -> PyErr {
    match e {
        dpbn_core::Error::Io(_) | dpbn_core::Error::Format(_) | dpbn_core::Error::Diverged { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// `"linear"`, `"truncgauss"`, `"exponential"` or `"ted"`.
fn parse_kind(name: &str, sigma_sq: f64) -> PyResult<ActivationKind> {
    let base = match name {
        "linear" => ActivationKind::linear(),
        "truncgauss" => ActivationKind::trunc_gauss(),
        "exponential" => ActivationKind::Exponential,
        "ted" => ActivationKind::Ted,
        other => return Err(PyValueError::new_err(format!("unknown activation kind {other:?}"))),
    };
    base.with_sigma_sq(sigma_sq).map_err(err)
}

/// `"reals"`, `"positives"` or `"unit"`.
fn range_kind(name: &str) -> PyResult<ActivationKind> {
    match name {
        "reals" => Ok(ActivationKind::linear()),
        "positives" => Ok(ActivationKind::trunc_gauss()),
        "unit" => Ok(ActivationKind::Ted),
        other => Err(PyValueError::new_err(format!("unknown range {other:?}"))),
    }
}

fn parse_decoder(name: &str) -> PyResult<Decoder> {
    match name {
        "dpbn" => Ok(Decoder::Dpbn),
        "aec" => Ok(Decoder::Aec),
        other => Err(PyValueError::new_err(format!("unknown decoder {other:?}"))),
    }
}

#[pyfunction]
#[pyo3(signature = (kind, a, sigma_sq = 1.0))]
fn activation(kind: &str, a: f64, sigma_sq: f64) -> PyResult<f64> {
    parse_kind(kind, sigma_sq)?.lambda(a).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kind, a, sigma_sq = 1.0))]
fn activation_prime(kind: &str, a: f64, sigma_sq: f64) -> PyResult<f64> {
    parse_kind(kind, sigma_sq)?.lambda_prime(a).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kind, y, sigma_sq = 1.0))]
fn activation_inverse(kind: &str, y: f64, sigma_sq: f64) -> PyResult<f64> {
    parse_kind(kind, sigma_sq)?.lambda_inv(y).map_err(err)
}

/// Solves `W′ λ(W h) = z` for an `N × M` matrix given as `N` rows.
#[pyfunction]
#[pyo3(signature = (weights, kind, z, sigma_sq = 1.0))]
fn solve_saddle<'py>(
    py: Python<'py>,
    weights: Vec<Vec<f64>>,
    kind: &str,
    z: Vec<f64>,
    sigma_sq: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_kind(kind, sigma_sq)?;
    let map = LinearMap::Dense(DenseMatrix::from_rows(&weights).map_err(err)?);
    let r = dpbn_core::solve_saddle(&map, kind, &z, &SaddleOptions::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("h", r.h)?;
    out.set_item("residual", r.residual_inf)?;
    out.set_item("iterations", r.iterations)?;
    out.set_item("converged", r.converged)?;
    out.set_item("failed", r.failed)?;
    Ok(out)
}

/// A D-PBN / tied-weight auto-encoder.
#[pyclass(name = "Network", module = "dpbn", skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: dpbn_core::Network,
}

#[pymethods]
impl PyNetwork {
    /// Random initialization with every layer on the same data range.
    #[new]
    #[pyo3(signature = (input_dim, nodes, range = "unit", seed = 0, init_scale = 1.0))]
    fn new(input_dim: usize, nodes: Vec<usize>, range: &str, seed: u64, init_scale: f64) -> PyResult<Self> {
        let mut cfg = NetworkConfig::matched(input_dim, nodes, range_kind(range)?);
        cfg.init_scale = init_scale;
        Ok(Self { inner: init_params(&cfg, seed).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: read_model(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_model(&self.inner, path).map_err(err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        self.inner.layers().iter().map(|l| (l.n_in(), l.n_out())).collect()
    }

    fn feature(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.feature(&x).map_err(err)
    }

    /// MaxEnt conditional-mean reconstruction; `None` when a layer fails.
    fn reconstruct_dpbn(&self, z: Vec<f64>) -> PyResult<Option<Vec<f64>>> {
        Ok(self.inner.reconstruct_dpbn(&z, &SaddleOptions::default()).map_err(err)?.x_bar)
    }

    fn decode_aec(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.decode_aec(&z).map_err(err)
    }

    /// `(mse, sampling_efficiency)` over `data`.
    #[pyo3(signature = (data, decoder = "dpbn"))]
    fn evaluate(&self, data: Vec<Vec<f64>>, decoder: &str) -> PyResult<(f64, f64)> {
        let e =
            training::evaluate(&self.inner, &data, parse_decoder(decoder)?, &SaddleOptions::default()).map_err(err)?;
        Ok((e.mse, e.sampling_efficiency))
    }

    fn __repr__(&self) -> String {
        let sizes: Vec<String> = self.inner.layers().iter().map(|l| l.n_out().to_string()).collect();
        format!("Network({} -> {}, {})", self.inner.input_dim(), sizes.join(" -> "), self.inner.input_kind())
    }
}

/// Trains a copy of `net`; returns the trained network and one dict per
/// evaluated epoch.
#[pyfunction]
#[pyo3(signature = (
    net, train_data, test_data, decoder = "dpbn", learning_rate = 0.1, epochs = 10,
    momentum = 0.9, batch_size = 20, l2_weight = 0.0, unroll = None, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    train_data: Vec<Vec<f64>>,
    test_data: Vec<Vec<f64>>,
    decoder: &str,
    learning_rate: f64,
    epochs: usize,
    momentum: f64,
    batch_size: usize,
    l2_weight: f64,
    unroll: Option<usize>,
    seed: u64,
) -> PyResult<(PyNetwork, Vec<Bound<'py, PyDict>>)> {
    let hyper = Hyperparams {
        learning_rate,
        momentum,
        batch_size,
        epochs,
        l2_weight,
        grad_mode: unroll.map_or(GradMode::ImplicitAdjoint, GradMode::UnrolledLastK),
        seed,
        eval_every: 1,
    };
    let decoder = parse_decoder(decoder)?;
    let report = py
        .detach(|| {
            training::train(net.inner.clone(), &train_data, &test_data, &hyper, decoder, &SaddleOptions::default())
        })
        .map_err(err)?;
    let mut epochs_out = Vec::new();
    for r in &report.epochs {
        let d = PyDict::new(py);
        d.set_item("epoch", r.epoch)?;
        d.set_item("train_mse", r.train.mse)?;
        d.set_item("test_mse", r.test.mse)?;
        d.set_item("train_efficiency", r.train.sampling_efficiency)?;
        d.set_item("test_efficiency", r.test.sampling_efficiency)?;
        d.set_item("seconds", r.seconds)?;
        epochs_out.push(d);
    }
    Ok((PyNetwork { inner: report.model }, epochs_out))
}

/// Reconstructs a square image (rows of pixels in [0, 1]) from its
/// `keep × keep` DCT block. Returns the original, linear and MaxEnt images.
#[pyfunction]
#[pyo3(signature = (image, keep, range = "unit"))]
fn reconstruct_image<'py>(
    py: Python<'py>,
    image: Vec<Vec<f64>>,
    keep: usize,
    range: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match range {
        "unit" => ActivationKind::Ted,
        "positives" => ActivationKind::Exponential,
        other => return Err(PyValueError::new_err(format!("unknown image range {other:?}"))),
    };
    let height = image.len();
    let width = image.first().map_or(0, Vec::len);
    let img = GrayImage::new(height, width, image.into_iter().flatten().collect()).map_err(err)?;
    let r = dpbn_core::reconstruct_image(&img, keep, kind, &SaddleOptions::default()).map_err(err)?;
    let rows = |im: &GrayImage| im.pixels.chunks(im.width).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let out = PyDict::new(py);
    out.set_item("original", rows(&r.original))?;
    out.set_item("linear", rows(&r.linear))?;
    out.set_item("maxent", rows(&r.maxent))?;
    out.set_item("residual", r.solve.residual_inf)?;
    out.set_item("failed", r.solve.failed)?;
    Ok(out)
}

/// Runs the quadrature and solver checks; returns `(passed, failures)`.
#[pyfunction]
fn selftest() -> (bool, Vec<String>) {
    let report = dpbn_core::selftest::run_selftest(&dpbn_core::selftest::Builtin);
    (report.passed(), report.failures.iter().map(ToString::to_string).collect())
}

#[pymodule]
fn dpbn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(activation, m)?)?;
    m.add_function(wrap_pyfunction!(activation_prime, m)?)?;
    m.add_function(wrap_pyfunction!(activation_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(solve_saddle, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_image, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
