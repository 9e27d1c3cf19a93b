//! Python bindings: images, speckle simulation, the network, training,
//! metrics and the Lee/Kuan baselines.

use std::path::PathBuf;

use idcnn::baselines::{kuan_filter, lee_filter, DEFAULT_WINDOW};
use idcnn::image::{load_any, save_any};
use idcnn::metrics::{self, Region};
use idcnn::network::{load_params, save_params};
use idcnn::speckle::{self, SpeckleParams};
use idcnn::trainer::{self, TrainConfig};
use idcnn::{Architecture, Error, Image, NetworkParams};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::UnsupportedFormat { .. } | Error::CorruptFile(_) | Error::EmptyDataset(_) => {
            PyIOError::new_err(e.to_string())
        }
        Error::NonFiniteLoss { .. } => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Grayscale image with values nominally in [0, 1].
#[pyclass(name = "Image", module = "idcnn_py", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: Image,
}

#[pymethods]
impl PyImage {
    /// Row-major pixel values.
    #[new]
    fn new(width: usize, height: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: Image::new(width, height, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            inner: Image::filled(width, height, value),
        }
    }

    /// PNG/PGM or raw `.spkl`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_any(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_any(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<f32> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) out of range")));
        }
        Ok(self.inner.get(x, y))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Despeckling network parameters.
#[pyclass(name = "Network", module = "idcnn_py")]
struct PyNetwork {
    inner: NetworkParams<f32>,
}

#[pymethods]
impl PyNetwork {
    /// He-initialized network.
    #[new]
    #[pyo3(signature = (features=64, depth=8, seed=0))]
    fn new(features: usize, depth: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: NetworkParams::init(Architecture { features, depth }, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_params(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_params(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Parameter count of every convolution block.
    fn param_census(&self) -> Vec<usize> {
        self.inner.param_census()
    }

    #[getter]
    fn calibrated(&self) -> bool {
        self.inner.is_calibrated()
    }

    /// Returns `(despeckled, estimated_speckle)`.
    fn despeckle(&self, py: Python<'_>, noisy: &PyImage) -> PyResult<(PyImage, PyImage)> {
        let (x, n) = py
            .detach(|| self.inner.despeckle_image(&noisy.inner))
            .map_err(py_err)?;
        Ok((PyImage { inner: x }, PyImage { inner: n }))
    }

    fn __repr__(&self) -> String {
        let a = self.inner.architecture();
        format!("Network(features={}, depth={})", a.features, a.depth)
    }
}

#[pyfunction]
fn gamma_pdf(f: f64, looks: f64) -> PyResult<f64> {
    speckle::gamma_pdf(f, looks).map_err(py_err)
}

/// Unit-mean Gamma speckle field with variance `1/looks`.
#[pyfunction]
fn sample_speckle(width: usize, height: usize, looks: f64, seed: u64) -> PyResult<PyImage> {
    let params = SpeckleParams::new(looks, seed).map_err(py_err)?;
    let field = speckle::sample_speckle(width, height, params).map_err(py_err)?;
    Ok(PyImage {
        inner: field.into_image(),
    })
}

#[pyfunction]
fn apply_speckle(clean: &PyImage, field: &PyImage) -> PyResult<PyImage> {
    let field = speckle::SpeckleField::new(field.inner.clone()).map_err(py_err)?;
    Ok(PyImage {
        inner: speckle::apply_speckle(&clean.inner, &field).map_err(py_err)?,
    })
}

/// Writes a speckled dataset; returns `(pairs, manifest, speckle_mean, speckle_var)`.
#[pyfunction]
#[pyo3(signature = (clean_dir, out_dir, looks, size=256, seed=0))]
fn generate_dataset(
    py: Python<'_>,
    clean_dir: PathBuf,
    out_dir: PathBuf,
    looks: f64,
    size: usize,
    seed: u64,
) -> PyResult<(usize, PathBuf, f64, f64)> {
    let s = py
        .detach(|| speckle::generate_dataset(&clean_dir, &out_dir, looks, size, seed))
        .map_err(py_err)?;
    Ok((s.pairs, s.manifest, s.speckle_mean, s.speckle_var))
}

/// Trains a fresh network; returns it with the per-iteration
/// `(l_e, l_tv, total)` losses.
#[pyfunction]
#[pyo3(signature = (
    manifest, output_dir=None, *, iterations=None, epochs=50, batch_size=16,
    learning_rate=2e-4, lambda_tv=0.002, seed=0, crop=None, features=64, depth=8,
    checkpoint_every=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    manifest: PathBuf,
    output_dir: Option<PathBuf>,
    iterations: Option<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    lambda_tv: f64,
    seed: u64,
    crop: Option<usize>,
    features: usize,
    depth: usize,
    checkpoint_every: usize,
) -> PyResult<(PyNetwork, Vec<(f64, f64, f64)>)> {
    let config = TrainConfig {
        manifest,
        output_dir,
        iterations,
        epochs,
        batch_size,
        learning_rate,
        lambda_tv,
        seed,
        crop,
        features,
        depth,
        checkpoint_every,
        ..TrainConfig::default()
    };
    let (params, log) = py
        .detach(|| {
            config.validate()?;
            let params = NetworkParams::init(config.architecture(), config.seed)?;
            trainer::train(config, params)
        })
        .map_err(py_err)?;
    let losses = log
        .iterations
        .iter()
        .map(|r| (r.euclidean, r.tv, r.total))
        .collect();
    Ok((PyNetwork { inner: params }, losses))
}

/// Per-image `(name, psnr, ssim, uqi)` of the network output on a manifest.
#[pyfunction]
#[pyo3(signature = (network, manifest, peak=1.0))]
fn evaluate_checkpoint(
    py: Python<'_>,
    network: &PyNetwork,
    manifest: PathBuf,
    peak: f64,
) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let report = py
        .detach(|| trainer::evaluate_checkpoint(&network.inner, &manifest, peak))
        .map_err(py_err)?;
    Ok(report
        .rows
        .into_iter()
        .map(|r| (r.name, r.psnr, r.ssim, r.uqi))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (x, xhat, peak=1.0))]
fn psnr(x: &PyImage, xhat: &PyImage, peak: f64) -> PyResult<f64> {
    metrics::psnr(&x.inner, &xhat.inner, peak).map_err(py_err)
}

#[pyfunction]
fn ssim(x: &PyImage, xhat: &PyImage) -> PyResult<f64> {
    metrics::ssim(&x.inner, &xhat.inner).map_err(py_err)
}

#[pyfunction]
fn uqi(x: &PyImage, xhat: &PyImage) -> PyResult<f64> {
    metrics::uqi(&x.inner, &xhat.inner).map_err(py_err)
}

/// ENL over the rectangle `(x, y, w, h)`.
#[pyfunction]
fn enl(img: &PyImage, region: (usize, usize, usize, usize)) -> PyResult<f64> {
    let (x, y, w, h) = region;
    metrics::enl(&img.inner, Region::new(x, y, w, h)).map_err(py_err)
}

#[pyfunction(name = "lee_filter")]
#[pyo3(signature = (y, looks, window=DEFAULT_WINDOW))]
fn py_lee_filter(y: &PyImage, looks: f64, window: usize) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: lee_filter(&y.inner, window, looks).map_err(py_err)?,
    })
}

#[pyfunction(name = "kuan_filter")]
#[pyo3(signature = (y, looks, window=DEFAULT_WINDOW))]
fn py_kuan_filter(y: &PyImage, looks: f64, window: usize) -> PyResult<PyImage> {
    Ok(PyImage {
        inner: kuan_filter(&y.inner, window, looks).map_err(py_err)?,
    })
}

#[pymodule]
fn idcnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(gamma_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_speckle, m)?)?;
    m.add_function(wrap_pyfunction!(apply_speckle, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(uqi, m)?)?;
    m.add_function(wrap_pyfunction!(enl, m)?)?;
    m.add_function(wrap_pyfunction!(py_lee_filter, m)?)?;
    m.add_function(wrap_pyfunction!(py_kuan_filter, m)?)?;
    Ok(())
}
