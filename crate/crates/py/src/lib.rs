//! Python bindings: trajectories, metrics, the gate and the batch pipelines.
//!
//! Structured results cross the boundary as plain dicts and lists built
//! from their JSON form.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use actgate_core::config::{detector_kind, resolve_model, BackendSpec, LoopConfig, RunConfig};
use actgate_core::corpus::{self, registry::rules_for};
use actgate_core::detectors::{build_detector, DetectorConfig, DetectorContext, DetectorKind};
use actgate_core::gateway::{Gateway, ScriptedBackend};
use actgate_core::metrics::{self, ScoredExample};
use actgate_core::model::{is_critical, ConfusionCounts, Trajectory};
use actgate_core::orchestrator::{
    check_invariants, gate_check, AlertState, AlertStore, EventLog, Feedback, FeedbackSource, SystemClock,
};
use actgate_core::pipeline::{run_eval, run_loop_config};
use actgate_core::prompts::PromptLibrary;
use actgate_core::{GateError as CoreGateError, RunError};

create_exception!(actgate, GateError, PyException, "Alert state or quota refused the operation.");
create_exception!(actgate, ReplayMiss, PyException, "A replay cache has no entry for a request.");

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_error(e: RunError) -> PyErr {
    if e.is_replay_miss() {
        ReplayMiss::new_err(e.to_string())
    } else if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyException::new_err(e.to_string())
    }
}

fn gate_error(e: CoreGateError) -> PyErr {
    match e {
        CoreGateError::UnknownAlert(id) => PyKeyError::new_err(id),
        other => GateError::new_err(other.to_string()),
    }
}

/// Python object for any serializable value, via `json.loads`.
fn to_py<T: Serialize + ?Sized>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn counts(preds: &[bool], labels: &[bool]) -> PyResult<ConfusionCounts> {
    metrics::confusion(preds, labels).map_err(value_error)
}

fn scored(scores: &[f64], labels: &[bool]) -> PyResult<Vec<ScoredExample>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &l))| ScoredExample::new(i.to_string(), s, l))
        .collect())
}

/// `{"tp", "fp", "fn", "tn"}` with misalignment as the positive class.
#[pyfunction]
fn confusion(py: Python<'_>, preds: Vec<bool>, labels: Vec<bool>) -> PyResult<PyObject> {
    to_py(py, &counts(&preds, &labels)?)
}

#[pyfunction]
fn macro_f1(preds: Vec<bool>, labels: Vec<bool>) -> PyResult<f64> {
    Ok(metrics::macro_f1(&counts(&preds, &labels)?))
}

#[pyfunction]
fn cost(preds: Vec<bool>, labels: Vec<bool>) -> PyResult<u64> {
    Ok(metrics::cost(&counts(&preds, &labels)?))
}

#[pyfunction]
fn effective_reliability(preds: Vec<bool>, labels: Vec<bool>) -> PyResult<f64> {
    Ok(metrics::effective_reliability(&counts(&preds, &labels)?))
}

#[pyfunction]
fn pr_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::pr_auc(&scored(&scores, &labels)?).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, bins = metrics::DEFAULT_ECE_BINS))]
fn ece(scores: Vec<f64>, labels: Vec<bool>, bins: usize) -> PyResult<f64> {
    metrics::ece(&scored(&scores, &labels)?, bins).map_err(value_error)
}

/// Returns `(threshold, dev_macro_f1)`; predictions are `score > threshold`.
#[pyfunction]
fn tune_threshold(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    let fit = metrics::tune_threshold(&scored(&scores, &labels)?).map_err(value_error)?;
    Ok((fit.threshold, fit.dev_macro_f1))
}

#[pyfunction]
fn binary_entropy(p: f64) -> f64 {
    actgate_core::detectors::binary_entropy(p)
}

/// A recorded agent trajectory.
#[pyclass(name = "Trajectory", module = "actgate", frozen)]
#[derive(Clone)]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    /// Parses one corpus record.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Trajectory = serde_json::from_str(text).map_err(value_error)?;
        inner.validate().map_err(value_error)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_error)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn trajectory_id(&self) -> &str {
        &self.inner.trajectory_id
    }

    #[getter]
    fn benchmark(&self) -> &'static str {
        self.inner.task.benchmark.as_str()
    }

    #[getter]
    fn instruction(&self) -> &str {
        &self.inner.task.instruction
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.steps.iter().map(|s| s.action.clone()).collect()
    }

    fn is_halted(&self) -> bool {
        self.inner.is_halted()
    }

    /// Gold misalignment label, or `None` when the task carries no gold.
    fn label(&self) -> PyResult<Option<bool>> {
        match &self.inner.task.gold {
            Some(gold) => corpus::resolve_label(&self.inner, gold).map(Some).map_err(value_error),
            None => Ok(None),
        }
    }

    /// Whether `action` matches one of the benchmark's critical-action rules.
    fn is_critical(&self, action: &str) -> bool {
        is_critical(action, &rules_for(self.inner.task.benchmark)).is_some()
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(id={:?}, benchmark={}, steps={})",
            self.inner.trajectory_id,
            self.inner.task.benchmark.as_str(),
            self.inner.steps.len()
        )
    }
}

#[pyfunction]
fn load_corpus(path: PathBuf) -> PyResult<Vec<PyTrajectory>> {
    let (trajectories, _) = corpus::load_corpus(&path).map_err(value_error)?;
    Ok(trajectories.into_iter().map(|inner| PyTrajectory { inner }).collect())
}

/// Alert store plus detector: decides whether pending actions may run and
/// takes reviewer verdicts.
#[pyclass(module = "actgate", frozen)]
struct Gate {
    store: AlertStore,
    detector: DetectorConfig,
    ctx: DetectorContext,
}

#[pymethods]
impl Gate {
    /// `backend` is `live`, `replay:PATH`, `scripted:PATH` or `record:PATH`;
    /// only the oracle detector runs without one. `quota=None` is unlimited.
    #[new]
    #[pyo3(signature = (detector = "oracle", backend = None, model = None, threshold = None, quota = None, proceed_on_expiry = false))]
    fn new(
        detector: &str,
        backend: Option<&str>,
        model: Option<&str>,
        threshold: Option<f64>,
        quota: Option<usize>,
        proceed_on_expiry: bool,
    ) -> PyResult<Self> {
        let kind = detector_kind(detector, None).map_err(value_error)?;
        let mut cfg = DetectorConfig::new(kind);
        cfg.threshold = threshold;
        cfg.validate().map_err(value_error)?;
        let backend = match backend {
            Some(spec) => spec.parse::<BackendSpec>().map_err(value_error)?.build().map_err(value_error)?,
            None if kind == DetectorKind::Oracle => Arc::new(ScriptedBackend::new()),
            None => return Err(PyValueError::new_err(format!("detector `{detector}` needs a backend"))),
        };
        let ctx = DetectorContext::new(
            Gateway::new(backend, resolve_model(model)),
            Arc::new(PromptLibrary::builtin()),
        );
        let store = AlertStore::with_parts(0, Arc::new(EventLog::new()), Arc::new(SystemClock), proceed_on_expiry);
        store.begin_iteration(0, quota.unwrap_or(usize::MAX));
        Ok(Self {
            store,
            detector: cfg,
            ctx,
        })
    }

    /// `{"decision": "proceed", ...}` or `{"decision": "hold", "alert_id", "alert"}`.
    fn check(&self, py: Python<'_>, trajectory: &PyTrajectory, pending_action: &str) -> PyResult<PyObject> {
        let traj = &trajectory.inner;
        let detector =
            build_detector(&self.detector, traj.task.benchmark, self.ctx.clone()).map_err(value_error)?;
        let rules = rules_for(traj.task.benchmark);
        let decision =
            py.allow_threads(|| gate_check(&self.store, traj, pending_action, detector.as_ref(), &rules));
        to_py(py, &decision)
    }

    /// Records a reviewer verdict. Text feedback is only accepted with a
    /// misaligned verdict.
    #[pyo3(signature = (alert_id, misaligned, feedback = None))]
    fn resolve(&self, py: Python<'_>, alert_id: &str, misaligned: bool, feedback: Option<&str>) -> PyResult<PyObject> {
        let feedback = match feedback {
            Some(_) if !misaligned => return Err(PyValueError::new_err("feedback needs a misaligned verdict")),
            Some(text) => Some(Feedback::natural_language(text, FeedbackSource::Human)),
            None if misaligned => Some(Feedback::binary(FeedbackSource::Human)),
            None => None,
        };
        let alert = self.store.resolve(alert_id, misaligned, feedback).map_err(gate_error)?;
        to_py(py, &alert)
    }

    #[pyo3(signature = (state = None))]
    fn alerts(&self, py: Python<'_>, state: Option<&str>) -> PyResult<PyObject> {
        let state = state
            .map(|s| serde_json::from_value::<AlertState>(serde_json::Value::from(s)))
            .transpose()
            .map_err(|_| PyValueError::new_err(format!("unknown alert state {:?}", state.unwrap_or_default())))?;
        to_py(py, &self.store.list(state))
    }

    fn alert(&self, py: Python<'_>, alert_id: &str) -> PyResult<PyObject> {
        let alert = self.store.get(alert_id).ok_or_else(|| PyKeyError::new_err(alert_id.to_string()))?;
        to_py(py, &alert)
    }

    fn quota(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.store.quota())
    }

    /// Starts a new iteration with a fresh inspection budget.
    #[pyo3(signature = (iteration, quota = None))]
    fn begin_iteration(&self, iteration: u32, quota: Option<usize>) {
        self.store.begin_iteration(iteration, quota.unwrap_or(usize::MAX));
    }

    /// Expires every open alert; returns how many expired.
    fn expire_open(&self) -> usize {
        self.store.expire_open().len()
    }

    fn events(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.store.log().snapshot())
    }

    /// Safety violations found in the event log so far.
    fn violations(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &check_invariants(&self.store.log().snapshot()))
    }
}

/// Runs an evaluation from a JSON run config and returns the report.
#[pyfunction]
fn run_eval_config(py: Python<'_>, path: PathBuf) -> PyResult<PyObject> {
    let cfg = RunConfig::load(&path).map_err(|e| run_error(e.into()))?;
    let report = py.allow_threads(|| run_eval(&cfg)).map_err(run_error)?;
    to_py(py, &report)
}

/// Runs the feedback-loop simulation from a JSON loop config.
#[pyfunction]
fn run_loop(py: Python<'_>, path: PathBuf) -> PyResult<PyObject> {
    let cfg = LoopConfig::load(&path).map_err(|e| run_error(e.into()))?;
    let run = py.allow_threads(|| run_loop_config(&cfg)).map_err(run_error)?;
    to_py(
        py,
        &serde_json::json!({"reports": run.reports, "violations": run.violations}),
    )
}

#[pymodule]
fn actgate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GateError", m.py().get_type::<GateError>())?;
    m.add("ReplayMiss", m.py().get_type::<ReplayMiss>())?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<Gate>()?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(cost, m)?)?;
    m.add_function(wrap_pyfunction!(effective_reliability, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(tune_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_loop, m)?)?;
    Ok(())
}
