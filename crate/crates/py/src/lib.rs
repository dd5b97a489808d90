//! Python bindings: images, Gabor features, PCA, fusion, template matching
//! and the configured evaluation run.

use std::path::PathBuf;

use biofuse_core::config::ConfigBuilder;
use biofuse_core::eval::evaluate as run_evaluation;
use biofuse_core::fuse::{self, WhiteningStats as CoreStats};
use biofuse_core::gabor::{build_bank, extract_features, BankSpec};
use biofuse_core::imageio::{self, PgmEncoding};
use biofuse_core::matching::{self, Metric, TemplateStore as CoreStore};
use biofuse_core::pipeline::ingest_datasets;
use biofuse_core::reduce::{self, PcaMethod, PcaModel as CorePca, PcaTarget};
use biofuse_core::{enhance, ErrorKind, FeatureVector, Modality};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: biofuse_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Io => PyIOError::new_err(e.to_string()),
        ErrorKind::Config | ErrorKind::Data => PyValueError::new_err(e.to_string()),
    }
}

fn modality(name: &str) -> PyResult<Modality> {
    name.parse().map_err(py_err)
}

fn vector(m: Modality, values: Vec<f64>) -> PyResult<FeatureVector> {
    FeatureVector::new(m, values).map_err(py_err)
}

/// Grayscale raster with `levels` gray levels.
#[pyclass(module = "biofuse")]
struct GrayImage {
    inner: imageio::GrayImage,
}

#[pymethods]
impl GrayImage {
    #[new]
    #[pyo3(signature = (width, height, pixels, levels = 256))]
    fn new(width: usize, height: usize, pixels: Vec<u16>, levels: u32) -> PyResult<Self> {
        let inner = imageio::GrayImage::new(width, height, levels, pixels).map_err(py_err)?;
        Ok(GrayImage { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(GrayImage {
            inner: imageio::load_pgm(&path).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (path, ascii = false))]
    fn save(&self, path: PathBuf, ascii: bool) -> PyResult<()> {
        let enc = if ascii { PgmEncoding::Ascii } else { PgmEncoding::Binary };
        imageio::write_pgm(&self.inner, path, enc).map_err(py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn levels(&self) -> u32 {
        self.inner.levels()
    }

    /// Row-major pixel values.
    #[getter]
    fn pixels(&self) -> Vec<u16> {
        self.inner.pixels().to_vec()
    }

    fn equalize(&self) -> Self {
        GrayImage {
            inner: enhance::equalize(&self.inner),
        }
    }

    fn resample(&self, width: usize, height: usize) -> PyResult<Self> {
        Ok(GrayImage {
            inner: imageio::resample(&self.inner, width, height).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{}, levels={})", self.inner.width(), self.inner.height(), self.inner.levels())
    }
}

/// Z-scored Gabor magnitude features of `image`, filter-major.
#[pyfunction]
#[pyo3(signature = (image, scales = 5, orientations = 8, downsample = 64, kernel_radius_cap = 15))]
fn gabor_features(
    image: PyRef<'_, GrayImage>,
    scales: usize,
    orientations: usize,
    downsample: usize,
    kernel_radius_cap: usize,
) -> PyResult<Vec<f64>> {
    let spec = BankSpec {
        scales,
        orientations,
        kernel_radius_cap,
        ..BankSpec::default()
    };
    let bank = build_bank(&spec).map_err(py_err)?;
    let v = extract_features(&image.inner, &bank, downsample, Modality::Face).map_err(py_err)?;
    Ok(v.into_values())
}

#[pyclass(module = "biofuse")]
struct PcaModel {
    inner: CorePca,
}

#[pymethods]
impl PcaModel {
    /// Fits on row samples. Give either `components` or `variance`.
    #[staticmethod]
    #[pyo3(signature = (samples, components = None, variance = None))]
    fn fit(samples: Vec<Vec<f64>>, components: Option<usize>, variance: Option<f64>) -> PyResult<Self> {
        let target = match (components, variance) {
            (Some(k), None) => PcaTarget::Components(k),
            (None, Some(f)) => PcaTarget::VarianceFraction(f),
            (None, None) => PcaTarget::VarianceFraction(0.95),
            (Some(_), Some(_)) => return Err(PyValueError::new_err("give components or variance, not both")),
        };
        let vs = samples
            .into_iter()
            .map(|s| vector(Modality::Face, s))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(PcaModel {
            inner: reduce::fit_pca(&vs, target, PcaMethod::Auto).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PcaModel {
            inner: CorePca::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn components(&self) -> usize {
        self.inner.components()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn explained_fraction(&self) -> f64 {
        self.inner.explained_fraction()
    }

    fn project(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let p = reduce::project(&self.inner, &vector(Modality::Face, v)?).map_err(py_err)?;
        Ok(p.into_values())
    }

    fn reconstruct(&self, coords: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&coords).map_err(py_err)
    }
}

/// Per-component mean and standard deviation of projected vectors.
#[pyclass(module = "biofuse")]
struct WhiteningStats {
    inner: CoreStats,
}

#[pymethods]
impl WhiteningStats {
    #[staticmethod]
    #[pyo3(signature = (samples, modality = "face", sigma_floor = fuse::DEFAULT_SIGMA_FLOOR))]
    fn fit(samples: Vec<Vec<f64>>, modality: &str, sigma_floor: f64) -> PyResult<Self> {
        let m = self::modality(modality)?;
        let vs = samples.into_iter().map(|s| vector(m, s)).collect::<PyResult<Vec<_>>>()?;
        Ok(WhiteningStats {
            inner: fuse::fit_whitening(&vs, sigma_floor).map_err(py_err)?,
        })
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn sigma(&self) -> Vec<f64> {
        self.inner.sigma().to_vec()
    }

    fn whiten(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        let w = fuse::whiten(&vector(self.inner.modality(), v)?, &self.inner).map_err(py_err)?;
        Ok(w.into_values())
    }

    fn mahalanobis(&self, v: Vec<f64>) -> PyResult<f64> {
        fuse::mahalanobis_distance(&vector(self.inner.modality(), v)?, &self.inner).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (v, c = fuse::DEFAULT_TANH_C))]
fn tanh_normalize(v: Vec<f64>, c: f64) -> PyResult<Vec<f64>> {
    Ok(fuse::tanh_normalize(&vector(Modality::Face, v)?, c).into_values())
}

/// Average-sum fusion of two normalized vectors of equal length.
#[pyfunction(name = "fuse")]
fn fuse_vectors(face: Vec<f64>, fingerprint: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = vector(Modality::Face, face)?;
    let p = vector(Modality::Fingerprint, fingerprint)?;
    Ok(fuse::fuse(&f, &p).map_err(py_err)?.into_values())
}

#[pyclass(module = "biofuse")]
struct TemplateStore {
    inner: CoreStore,
}

#[pymethods]
impl TemplateStore {
    /// Empty store; pass `stats` for the per-component Mahalanobis metric.
    #[new]
    #[pyo3(signature = (dim, modality = "fused", stats = None))]
    fn new(dim: usize, modality: &str, stats: Option<PyRef<'_, WhiteningStats>>) -> PyResult<Self> {
        let metric = match stats {
            Some(s) => Metric::Mahalanobis(s.inner.clone()),
            None => Metric::Euclidean,
        };
        Ok(TemplateStore {
            inner: CoreStore::new(self::modality(modality)?, dim, metric).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(TemplateStore {
            inner: CoreStore::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn enroll(&mut self, subject: String, v: Vec<f64>) -> PyResult<()> {
        let v = vector(self.inner.modality(), v)?;
        self.inner.enroll(subject, v).map_err(py_err)
    }

    /// Returns `(subject, [(subject, distance), ...])`, nearest first.
    #[pyo3(signature = (probe, k = 1))]
    fn identify(&self, probe: Vec<f64>, k: usize) -> PyResult<(String, Vec<(String, f64)>)> {
        let id = self
            .inner
            .identify(&vector(self.inner.modality(), probe)?, k)
            .map_err(py_err)?;
        Ok((id.subject, id.ranked.into_iter().map(|c| (c.subject, c.distance)).collect()))
    }

    /// Returns `(accepted, score)`.
    fn verify(&self, subject: &str, probe: Vec<f64>, threshold: f64) -> PyResult<(bool, f64)> {
        let v = self
            .inner
            .verify(subject, &vector(self.inner.modality(), probe)?, threshold)
            .map_err(py_err)?;
        Ok((v.accepted, v.score))
    }
}

/// `[(threshold, far, frr), ...]` for distance scores (accept when `<=`).
#[pyfunction]
fn roc_curve(genuine: Vec<f64>, impostor: Vec<f64>) -> Vec<(f64, f64, f64)> {
    matching::roc_curve(&genuine, &impostor)
        .into_iter()
        .map(|p| (p.threshold, p.far, p.frr))
        .collect()
}

#[pyfunction]
fn equal_error_rate(genuine: Vec<f64>, impostor: Vec<f64>) -> Option<f64> {
    matching::equal_error_rate(&matching::roc_curve(&genuine, &impostor))
}

/// Runs the configured evaluation and returns the report as JSON text.
/// `overrides` maps config keys to values and wins over the file.
#[pyfunction]
#[pyo3(signature = (config = None, overrides = Vec::new()))]
fn evaluate(py: Python<'_>, config: Option<PathBuf>, overrides: Vec<(String, String)>) -> PyResult<String> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = config {
        b = b.file(path).map_err(py_err)?;
    }
    for (k, v) in overrides {
        b = b.set(&k, v).map_err(py_err)?;
    }
    let cfg = b.build().map_err(py_err)?;
    py.detach(|| {
        let (face, fp) = ingest_datasets(&cfg)?;
        run_evaluation(&face, fp.as_ref(), &cfg).map(|r| r.to_json())
    })
    .map_err(py_err)
}

#[pymodule]
fn biofuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GrayImage>()?;
    m.add_class::<PcaModel>()?;
    m.add_class::<WhiteningStats>()?;
    m.add_class::<TemplateStore>()?;
    m.add_function(wrap_pyfunction!(gabor_features, m)?)?;
    m.add_function(wrap_pyfunction!(tanh_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_vectors, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(equal_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("FORMAT_VERSION", biofuse_core::FORMAT_VERSION)?;
    Ok(())
}
