use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use redpanda_core::image::ImageTensor;
use redpanda_core::metrics::{self, ScoreReport};
use redpanda_core::model::{Encoder, Mode};
use redpanda_core::numerics::Checkpoint;
use redpanda_core::runner::{self, ExperimentConfig};
use redpanda_core::scorer::ScoredSample;
use redpanda_core::synthdata::{self, AttributeSpec, RelevantLabels};
use redpanda_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingArtifact(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } | Error::HashMismatch(_) | Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(to_py)
}

/// Experiment configuration (INI text).
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => ExperimentConfig::from_text(t).map_err(to_py)?,
            None => ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::load(&path).map_err(to_py)? })
    }

    fn to_text(&self) -> PyResult<String> {
        self.inner.to_text().map_err(to_py)
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(to_py)
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_root()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.training.epochs
    }

    #[setter]
    fn set_epochs(&mut self, epochs: usize) {
        self.inner.training.epochs = epochs;
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn modes(&self) -> Vec<String> {
        self.inner.modes.iter().map(|m| m.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Config(output_dir={:?}, epochs={})", self.inner.output_root(), self.inner.training.epochs)
    }
}

/// AD / PA / RA scores of one run.
#[pyclass(name = "Report", frozen)]
struct PyReport {
    inner: ScoreReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn ad_score(&self) -> f64 {
        self.inner.ad_score
    }

    #[getter]
    fn pa_score(&self) -> f64 {
        self.inner.pa_score
    }

    #[getter]
    fn ra_score(&self) -> f64 {
        self.inner.ra_score
    }

    #[getter]
    fn pa_gap(&self) -> f64 {
        self.inner.pa_gap()
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode.clone()
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(ad={:.4}, pa={:.4}, ra={:.4})",
            self.inner.ad_score, self.inner.pa_score, self.inner.ra_score
        )
    }
}

/// Trained encoder loaded from a `model.rpck` checkpoint.
#[pyclass(name = "Encoder", frozen)]
struct PyEncoder {
    inner: Encoder<f32>,
}

#[pymethods]
impl PyEncoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(to_py)?;
        Ok(Self { inner: Encoder::from_checkpoint(&ckpt).map_err(to_py)? })
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.inner.image_size()
    }

    #[getter]
    fn code_dim(&self) -> usize {
        self.inner.code_dim()
    }

    /// Unit-norm codes for flat HWC images with values in [0, 1].
    fn encode(&self, py: Python<'_>, images: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        let s = self.inner.image_size();
        let tensors = images
            .into_iter()
            .map(|d| ImageTensor::new(s, s, d))
            .collect::<redpanda_core::Result<Vec<_>>>()
            .map_err(to_py)?;
        let codes = py
            .detach(|| self.inner.encode(&tensors.iter().collect::<Vec<_>>()))
            .map_err(to_py)?;
        Ok(codes.data().chunks(self.inner.code_dim()).map(<[f32]>::to_vec).collect())
    }
}

/// Renders one glyph as a flat HWC list of `size * size * 3` floats.
#[pyfunction]
#[pyo3(signature = (class_id, nuisance, seed, size=32, size_level=0, jitter=0))]
fn render_sample(
    class_id: usize,
    nuisance: usize,
    seed: u64,
    size: usize,
    size_level: usize,
    jitter: usize,
) -> PyResult<Vec<f32>> {
    let labels = RelevantLabels { class: class_id, size: size_level, jitter };
    let img = synthdata::render_sample(&AttributeSpec::default(), &labels, nuisance, seed, size).map_err(to_py)?;
    Ok(img.data().to_vec())
}

/// Probability that a random positive outscores a random negative (ties count half).
#[pyfunction]
fn roc_auc(positives: Vec<f64>, negatives: Vec<f64>) -> PyResult<f64> {
    metrics::roc_auc(&positives, &negatives).map_err(to_py)
}

/// AD / PA / RA from parallel lists of roles and scores.
#[pyfunction]
fn compute_report(roles: Vec<String>, scores: Vec<f64>) -> PyResult<PyReport> {
    if roles.len() != scores.len() {
        return Err(PyValueError::new_err(format!("{} roles but {} scores", roles.len(), scores.len())));
    }
    let scored = roles
        .iter()
        .zip(scores)
        .enumerate()
        .map(|(i, (r, score))| Ok(ScoredSample { id: i.to_string(), role: r.parse()?, score }))
        .collect::<redpanda_core::Result<Vec<_>>>()
        .map_err(to_py)?;
    Ok(PyReport { inner: metrics::compute_report(&scored).map_err(to_py)? })
}

/// Writes (or reuses) the dataset; returns its directory.
#[pyfunction]
fn generate(py: Python<'_>, config: &PyConfig) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    Ok(py.detach(|| runner::generate(&cfg)).map_err(to_py)?.dir)
}

/// Trains one run; returns the checkpoint path.
#[pyfunction]
fn train(py: Python<'_>, config: &PyConfig, mode: &str, seed: u64) -> PyResult<PathBuf> {
    let (cfg, mode) = (config.inner.clone(), parse_mode(mode)?);
    Ok(py.detach(|| runner::train_run(&cfg, mode, seed)).map_err(to_py)?.checkpoint)
}

/// Scores the test split; returns the scores file path.
#[pyfunction]
fn score(py: Python<'_>, config: &PyConfig, mode: &str, seed: u64) -> PyResult<PathBuf> {
    let (cfg, mode) = (config.inner.clone(), parse_mode(mode)?);
    py.detach(|| runner::score_run(&cfg, mode, seed)).map_err(to_py)
}

#[pyfunction]
fn evaluate(config: &PyConfig, mode: &str, seed: u64) -> PyResult<PyReport> {
    let inner = runner::evaluate_run(&config.inner, parse_mode(mode)?, seed).map_err(to_py)?;
    Ok(PyReport { inner })
}

/// Mean ± std table over run directories or output roots, as CSV text.
#[pyfunction]
fn report(dirs: Vec<PathBuf>) -> PyResult<String> {
    Ok(runner::summarize(&dirs).map_err(to_py)?.to_csv())
}

#[pymodule]
fn redpanda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(render_sample, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(compute_report, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
