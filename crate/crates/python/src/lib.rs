//! Python bindings: datasets, two-stage training, checkpoints, metrics and
//! the verification suite. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use cmstew::data::{self, Split, SyntheticSpec};
use cmstew::experiment::{ArchConfig, TransferExperiment};
use cmstew::models::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind};
use cmstew::numerics::Tensor;
use cmstew::objectives::{self, DccaConfig};
use cmstew::training::{self, NullSink, TrainConfig};
use cmstew::verify::{run_verify, Level, Oracles};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

fn err(e: cmstew::Error) -> PyErr {
    match e {
        cmstew::Error::Io { .. } | cmstew::Error::Data { .. } => PyIOError::new_err(e.to_string()),
        cmstew::Error::Diverged { .. } | cmstew::Error::Numerical { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Builds a config from an optional dict of overrides via its JSON form.
fn config<T: DeserializeOwned>(
    py: Python<'_>,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<T> {
    let text = match overrides {
        Some(d) => py
            .import("json")?
            .call_method1("dumps", (d,))?
            .extract::<String>()?,
        None => "{}".to_string(),
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py_json(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix<T: cmstew::numerics::Scalar>(rows: Vec<Vec<T>>) -> PyResult<Tensor<T>> {
    Tensor::from_rows(&rows).map_err(err)
}

fn rows<T: cmstew::numerics::Scalar>(t: &Tensor<T>) -> Vec<Vec<T>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn split(name: &str) -> PyResult<Split> {
    Split::parse(name).map_err(err)
}

/// A labelled multi-modal dataset.
#[pyclass(module = "cmstew_py", skip_from_py_object)]
#[derive(Clone)]
struct Dataset {
    inner: data::Dataset,
}

#[pymethods]
impl Dataset {
    /// Generates the synthetic two-modality task; keyword overrides follow
    /// the `synthetic` section of a run config.
    #[staticmethod]
    #[pyo3(signature = (**spec))]
    fn synthetic(py: Python<'_>, spec: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let spec: SyntheticSpec = config(py, spec)?;
        Ok(Dataset {
            inner: data::generate_synthetic(&spec).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: data::load_dataset(&manifest).map_err(err)?,
        })
    }

    /// Writes CSV files plus a manifest into `dir`; returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        data::save_dataset(&self.inner, &dir).map_err(err)
    }

    /// Copy standardised with train-split statistics.
    fn standardized(&self) -> PyResult<Self> {
        let (inner, _) = data::standardize(self.inner.clone()).map_err(err)?;
        Ok(Dataset { inner })
    }

    #[getter]
    fn task(&self) -> &'static str {
        self.inner.task.as_str()
    }

    /// Modality name to feature width.
    #[getter]
    fn modalities(&self) -> Vec<(String, usize)> {
        self.inner
            .modalities
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect()
    }

    fn num_clips(&self, split_name: &str) -> PyResult<usize> {
        Ok(self.inner.split(split(split_name)?).len())
    }

    /// Features of one clip as rows of frames.
    fn features(&self, split_name: &str, index: usize, modality: &str) -> PyResult<Vec<Vec<f32>>> {
        let clip = self
            .inner
            .split(split(split_name)?)
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("clip index {index} out of range")))?;
        Ok(rows(clip.modality(modality).map_err(err)?))
    }

    fn labels(&self, split_name: &str, index: usize) -> PyResult<Vec<f32>> {
        self.inner
            .split(split(split_name)?)
            .get(index)
            .map(|c| c.labels.clone())
            .ok_or_else(|| PyValueError::new_err(format!("clip index {index} out of range")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(task={}, modalities={:?}, train={}, dev={}, test={})",
            self.inner.task.as_str(),
            self.inner.modalities,
            self.inner.split(Split::Train).len(),
            self.inner.split(Split::Dev).len(),
            self.inner.split(Split::Test).len()
        )
    }
}

/// A trained source (single-modality) or weak (transfer) model.
#[pyclass(module = "cmstew_py")]
struct Model {
    inner: Checkpoint,
    history: Vec<training::EpochReport>,
    best_epoch: usize,
}

impl Model {
    fn new(inner: Checkpoint) -> Self {
        Model {
            inner,
            history: Vec::new(),
            best_epoch: 0,
        }
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model::new(read_checkpoint(&path).map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_checkpoint(&path, &self.inner).map_err(err)
    }

    /// "source" or "weak".
    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind() {
            CheckpointKind::Source => "source",
            CheckpointKind::Weak => "weak",
        }
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.network().store.numel()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Per-epoch train/dev reports of the run that produced this model.
    fn history(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_json(py, &self.history)
    }

    /// Segment-level outputs for one clip given as rows of frames.
    fn predict(&self, x: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
        self.inner.network().predict(&matrix(x)?).map_err(err)
    }

    fn encode(&self, x: Vec<Vec<f32>>) -> PyResult<Vec<Vec<f32>>> {
        Ok(rows(
            &self.inner.network().encode(&matrix(x)?).map_err(err)?,
        ))
    }

    /// Eval-mode losses and metrics on a split.
    #[pyo3(signature = (dataset, modality, split_name = "dev"))]
    fn evaluate(
        &self,
        py: Python<'_>,
        dataset: &Dataset,
        modality: &str,
        split_name: &str,
    ) -> PyResult<Py<PyAny>> {
        let report = training::evaluate(
            self.inner.network(),
            &dataset.inner,
            split(split_name)?,
            modality,
        )
        .map_err(err)?;
        to_py_json(py, &report)
    }

    /// The decoder-free model used at test time.
    fn deployable(&self) -> PyResult<Self> {
        match &self.inner {
            Checkpoint::Weak(w) => Ok(Model::new(Checkpoint::Source(w.deployable().map_err(err)?))),
            Checkpoint::Source(_) => Err(PyValueError::new_err("already a source model")),
        }
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={}, params={})", self.kind(), self.num_params())
    }
}

/// Stage one: trains the encoder and classifier of `modality`.
#[pyfunction]
#[pyo3(signature = (dataset, modality, arch = None, train = None, run_id = "source"))]
fn train_source(
    py: Python<'_>,
    dataset: &Dataset,
    modality: &str,
    arch: Option<&Bound<'_, PyDict>>,
    train: Option<&Bound<'_, PyDict>>,
    run_id: &str,
) -> PyResult<Model> {
    let arch: ArchConfig = config(py, arch)?;
    let cfg: TrainConfig = config(py, train)?;
    let ds = &dataset.inner;
    let model = arch.model(
        ds.task,
        ds.dim(modality).map_err(err)?,
        None,
        cfg.dropout_rate,
    );
    let out = py
        .detach(|| training::train_source(ds, modality, &model, &cfg, run_id, &mut NullSink))
        .map_err(err)?;
    Ok(Model {
        inner: Checkpoint::Source(out.model),
        history: out.history,
        best_epoch: out.best_epoch,
    })
}

/// Stage two: trains the weak modality against a frozen source model.
#[pyfunction]
#[pyo3(signature = (dataset, weak, strong, source, arch = None, train = None, run_id = "weak"))]
#[allow(clippy::too_many_arguments)]
fn train_weak(
    py: Python<'_>,
    dataset: &Dataset,
    weak: &str,
    strong: &str,
    source: &Model,
    arch: Option<&Bound<'_, PyDict>>,
    train: Option<&Bound<'_, PyDict>>,
    run_id: &str,
) -> PyResult<Model> {
    let Checkpoint::Source(src) = &source.inner else {
        return Err(PyValueError::new_err("source must be a stage-one model"));
    };
    let arch: ArchConfig = config(py, arch)?;
    let cfg: TrainConfig = config(py, train)?;
    let ds = &dataset.inner;
    let model = arch.model(
        ds.task,
        ds.dim(weak).map_err(err)?,
        Some(ds.dim(strong).map_err(err)?),
        cfg.dropout_rate,
    );
    let out = py
        .detach(|| training::train_weak(ds, weak, strong, src, &model, &cfg, run_id, &mut NullSink))
        .map_err(err)?;
    Ok(Model {
        inner: Checkpoint::Weak(out.model),
        history: out.history,
        best_epoch: out.best_epoch,
    })
}

/// Sum of regularised canonical correlations between two views.
#[pyfunction]
#[pyo3(signature = (xs, xw, r1 = 1e-3, r2 = 1e-3))]
fn dcca_correlation(xs: Vec<Vec<f64>>, xw: Vec<Vec<f64>>, r1: f64, r2: f64) -> PyResult<f64> {
    let cfg = DccaConfig {
        r1,
        r2,
        ..DccaConfig::default()
    };
    objectives::dcca_correlation(&matrix(xs)?, &matrix(xw)?, &cfg).map_err(err)
}

#[pyfunction]
fn ccc(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    objectives::ccc(&y, &yhat).map_err(err)
}

#[pyfunction]
fn pearson(y: Vec<f64>, yhat: Vec<f64>) -> PyResult<f64> {
    objectives::pearson(&y, &yhat).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (y, yhat, threshold = 0.5))]
fn binary_accuracy(y: Vec<f64>, yhat: Vec<f64>, threshold: f64) -> PyResult<f64> {
    objectives::binary_accuracy(&y, &yhat, threshold).map_err(err)
}

#[pyfunction]
fn weighted_f1(y: Vec<f64>, yhat_bin: Vec<f64>) -> PyResult<f64> {
    objectives::weighted_f1(&y, &yhat_bin).map_err(err)
}

/// Delays labels by `shift_seconds`, padding the tail with the last value.
#[pyfunction]
#[pyo3(signature = (labels, shift_seconds, frame_seconds = 0.04))]
fn shift_labels(labels: Vec<f32>, shift_seconds: f64, frame_seconds: f64) -> PyResult<Vec<f32>> {
    data::shift_labels(&labels, shift_seconds, frame_seconds).map_err(err)
}

/// Runs the verification suite ("fast" or "full"); returns the report.
#[pyfunction]
#[pyo3(signature = (level = "fast"))]
fn verify(py: Python<'_>, level: &str) -> PyResult<Py<PyAny>> {
    let level = Level::parse(level).map_err(err)?;
    let report = py.detach(|| {
        run_verify(
            level,
            &Oracles::default(),
            &TransferExperiment::default(),
            &mut NullSink,
        )
    });
    to_py_json(py, &report)
}

#[pymodule]
fn cmstew_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train_source, m)?)?;
    m.add_function(wrap_pyfunction!(train_weak, m)?)?;
    m.add_function(wrap_pyfunction!(dcca_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(ccc, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(binary_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(shift_labels, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
