//! Python bindings. Samples cross the boundary as a `Sample` class; other
//! structured values come back as plain tuples, lists and dicts.

use std::path::Path;

use mitskit_core::dataset;
use mitskit_core::inference;
use mitskit_core::metrics::{self, RunResult};
use mitskit_core::pipeline::{self, View};
use mitskit_core::synthgen::{self, GeneratorConfig};
use mitskit_core::transforms::{Countermeasure, PendingPolicy};
use mitskit_core::{
    ChannelRegistry, Error, FormatPolicy, MitsSample, Observation, Task, TaskConfig,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn registry(name: &str) -> PyResult<ChannelRegistry> {
    ChannelRegistry::load(name).map_err(py_err)
}

fn task(name: &str) -> PyResult<TaskConfig> {
    let t: Task = name.parse().map_err(py_err)?;
    Ok(TaskConfig::for_task(t))
}

fn view(name: &str, cutoff_hours: f64, countermeasure: &str) -> PyResult<View> {
    Ok(match name {
        "full" => View::Full,
        "redacted" => View::Redacted,
        "pending" => {
            let cm: Countermeasure = countermeasure.parse().map_err(py_err)?;
            View::Pending(PendingPolicy::new(cutoff_hours, cm).map_err(py_err)?)
        }
        other => return Err(PyValueError::new_err(format!("unknown view `{other}`"))),
    })
}

/// One labeled sample of observations over a time window.
#[pyclass(name = "Sample", module = "mitskit", skip_from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: MitsSample,
}

#[pymethods]
impl PySample {
    #[new]
    fn new(sample_id: String, label: usize) -> Self {
        PySample {
            inner: MitsSample::new(sample_id, label, Vec::new()),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PySample { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[pyo3(signature = (charttime, channel, value, storetime=None))]
    fn add_numeric(&mut self, charttime: f64, channel: String, value: f64, storetime: Option<f64>) {
        let mut obs = Observation::numeric(charttime, channel, value);
        obs.storetime = storetime;
        self.inner.observations.push(obs);
    }

    #[pyo3(signature = (charttime, channel, text, storetime=None))]
    fn add_text(&mut self, charttime: f64, channel: String, text: String, storetime: Option<f64>) {
        let mut obs = Observation::text(charttime, channel, text);
        obs.storetime = storetime;
        self.inner.observations.push(obs);
    }

    /// Problems found against a registry, as `(kind, message)` pairs.
    #[pyo3(signature = (registry_name="mimic_iv"))]
    fn validate(&self, registry_name: &str) -> PyResult<Vec<(String, String)>> {
        let reg = registry(registry_name)?;
        Ok(mitskit_core::validate_sample(&self.inner, &reg)
            .into_iter()
            .map(|v| (v.kind().to_string(), v.to_string()))
            .collect())
    }

    #[getter]
    fn sample_id(&self) -> &str {
        &self.inner.sample_id
    }

    #[getter]
    fn label(&self) -> usize {
        self.inner.label
    }

    fn __len__(&self) -> usize {
        self.inner.observations.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Sample(id={:?}, label={}, observations={})",
            self.inner.sample_id,
            self.inner.label,
            self.inner.observations.len()
        )
    }
}

/// Synthetic cohort with informative sampling.
#[pyfunction]
#[pyo3(signature = (n_samples, seed=0, intensity_ratio=2.0, positive_rate=0.25, preset="mimic_iv"))]
fn generate_synth(
    py: Python<'_>,
    n_samples: usize,
    seed: u64,
    intensity_ratio: f64,
    positive_rate: f64,
    preset: &str,
) -> PyResult<Vec<PySample>> {
    let cfg = GeneratorConfig {
        seed,
        n_samples,
        intensity_ratio,
        positive_rate,
        preset: preset.to_string(),
        ..GeneratorConfig::default()
    };
    let reg = registry(preset)?;
    let data = py
        .detach(|| synthgen::generate_dataset(&cfg, &reg))
        .map_err(py_err)?;
    Ok(data.into_iter().map(|inner| PySample { inner }).collect())
}

#[pyfunction]
fn read_dataset(path: &str) -> PyResult<Vec<PySample>> {
    let data = dataset::read_dataset(Path::new(path)).map_err(py_err)?;
    Ok(data.into_iter().map(|inner| PySample { inner }).collect())
}

#[pyfunction]
fn write_dataset(path: &str, samples: Vec<PyRef<'_, PySample>>) -> PyResult<()> {
    let data: Vec<MitsSample> = samples.iter().map(|s| s.inner.clone()).collect();
    dataset::write_dataset(Path::new(path), &data).map_err(py_err)
}

/// Renders a sample under `view` (full, redacted or pending).
#[pyfunction]
#[pyo3(signature = (sample, view_name="full", registry_name="mimic_iv", cutoff_hours=24.0, countermeasure="drop"))]
fn serialize(
    sample: PyRef<'_, PySample>,
    view_name: &str,
    registry_name: &str,
    cutoff_hours: f64,
    countermeasure: &str,
) -> PyResult<String> {
    let v = view(view_name, cutoff_hours, countermeasure)?;
    let reg = registry(registry_name)?;
    v.serialize(&sample.inner, &reg, &FormatPolicy::default())
        .map(|s| s.text)
        .map_err(py_err)
}

/// Parses a serialized block into `(time, channel_id, value)` tuples; the
/// value is None for pairs.
#[pyfunction]
#[pyo3(signature = (text, registry_name="mimic_iv"))]
fn parse(text: &str, registry_name: &str) -> PyResult<Vec<(String, String, Option<String>)>> {
    let reg = registry(registry_name)?;
    let flat = mitskit_core::parse(text, &reg).map_err(py_err)?;
    Ok(flat
        .into_iter()
        .map(|o| (o.time_text(), o.channel, o.value))
        .collect())
}

/// Returns `(system, user, template_id)`.
#[pyfunction]
#[pyo3(signature = (sample, task_name="ihm", view_name="full", registry_name="mimic_iv", cutoff_hours=24.0, countermeasure="drop"))]
fn build_prompt(
    sample: PyRef<'_, PySample>,
    task_name: &str,
    view_name: &str,
    registry_name: &str,
    cutoff_hours: f64,
    countermeasure: &str,
) -> PyResult<(String, String, String)> {
    let v = view(view_name, cutoff_hours, countermeasure)?;
    let b = v
        .prompt(&sample.inner, &registry(registry_name)?, &FormatPolicy::default(), &task(task_name)?)
        .map_err(py_err)?;
    Ok((b.system, b.user, b.template_id.name()))
}

/// Class probabilities from a chat-completions response body (JSON text).
#[pyfunction]
#[pyo3(signature = (response_json, task_name="ihm"))]
fn class_probs(response_json: &str, task_name: &str) -> PyResult<Vec<f64>> {
    let body: serde_json::Value =
        serde_json::from_str(response_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let tokens = inference::parse_chat_logprobs(&body).map_err(PyValueError::new_err)?;
    Ok(inference::scores_from_generation(&tokens, &task(task_name)?).probs)
}

#[pyfunction]
fn count_baseline(sample: PyRef<'_, PySample>) -> f64 {
    synthgen::count_baseline_score(&sample.inner)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auroc(&scores, &labels).map_err(py_err)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::average_precision(&scores, &labels).map_err(py_err)
}

/// Average rank per method from `(method, dataset, auroc, ap)` rows.
#[pyfunction]
fn average_ranks(rows: Vec<(String, String, f64, f64)>) -> PyResult<Vec<(String, f64)>> {
    let runs: Vec<RunResult> = rows
        .into_iter()
        .map(|(method, dataset_id, auroc, ap)| RunResult {
            method,
            dataset_id,
            run_index: 0,
            auroc,
            ap,
            n_samples: 0,
            n_positive: 0,
        })
        .collect();
    let report = metrics::aggregate_runs(&runs, &[]).map_err(py_err)?;
    Ok(report.avg_rank.into_iter().collect())
}

/// Runs a pipeline file and returns the output directory.
#[pyfunction]
fn run_pipeline(py: Python<'_>, path: &str) -> PyResult<String> {
    let summary = py
        .detach(|| pipeline::run_pipeline_file(Path::new(path)))
        .map_err(py_err)?;
    Ok(summary.out_dir.to_string_lossy().into_owned())
}

#[pymodule]
fn mitskit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(serialize, m)?)?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(class_probs, m)?)?;
    m.add_function(wrap_pyfunction!(count_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(average_ranks, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
