//! Python bindings for featmeta.

use std::path::PathBuf;

use featmeta::autodiff::Tensor;
use featmeta::corpus::{spans_from_labels, synth_corpus, to_biose, write_conll, Rank, SynthSpec};
use featmeta::features::{self, FEATURE_DIM};
use featmeta::harness::{self, Model as Inner, RunConfig, Trained};
use featmeta::models::crf;
use featmeta::models::save_checkpoint;
use featmeta::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::InvalidArgument(_) | Error::Parse { .. } | Error::Shape { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Round-trips a serialisable value through `json.loads`.
fn to_json<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(to_py)
}

/// A trained tagger or NLI model.
#[pyclass(unsendable)]
struct Model {
    inner: Trained,
}

#[pymethods]
impl Model {
    /// Loads a model directory written by `train`, or a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: featmeta::cli::load_model(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.inner.checkpoint().map_err(to_py)?).map_err(to_py)
    }

    #[getter]
    fn task(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_json(py, &self.inner.config.task)
    }

    #[getter]
    fn sources(&self) -> Vec<String> {
        self.inner.model.frontend().sources.names().into_iter().map(str::to_string).collect()
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_json(py, &self.inner.config)
    }

    /// Tags one pre-tokenised sentence.
    fn tag(&self, tokens: Vec<String>) -> PyResult<Vec<String>> {
        match &self.inner.model {
            Inner::Tagger(t) => t.predict(&self.inner.store, &tokens).map_err(to_py),
            Inner::Nli(_) => Err(PyValueError::new_err("model is an NLI classifier")),
        }
    }

    /// Labels a premise/hypothesis pair.
    fn classify(&self, premise: Vec<String>, hypothesis: Vec<String>) -> PyResult<String> {
        match &self.inner.model {
            Inner::Nli(m) => Ok(m.predict(&self.inner.store, &premise, &hypothesis).map_err(to_py)?.as_str().to_string()),
            Inner::Tagger(_) => Err(PyValueError::new_err("model is a tagger")),
        }
    }

    /// Per-token attention weights over sources, or None without attention.
    fn attention(&self, tokens: Vec<String>) -> PyResult<Option<Vec<Vec<f64>>>> {
        let alphas = self.inner.model.frontend().attention(&self.inner.store, &tokens).map_err(to_py)?;
        Ok(alphas.map(|a| (0..a.rows()).map(|r| a.row(r).to_vec()).collect()))
    }
}

/// Trains from a JSON config file. Returns the model and its metrics.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new(), seed=None))]
fn train(py: Python<'_>, config: PathBuf, overrides: Vec<String>, seed: Option<u64>) -> PyResult<(Model, Py<PyAny>)> {
    let mut overrides = overrides;
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = RunConfig::load(&config, &overrides).map_err(to_py)?;
    let (trained, report) = harness::train_from_config(&cfg).map_err(to_py)?;
    Ok((Model { inner: trained }, to_json(py, &report)?))
}

/// Runs the command-line interface with `args` (without the program name).
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    featmeta::cli::run(std::iter::once("featmeta".to_string()).chain(args))
}

#[pyfunction]
fn shape_string(token: &str) -> String {
    features::shape_string(token)
}

#[pyfunction]
fn frequency(rank: u64) -> PyResult<f64> {
    features::frequency(rank).map_err(to_py)
}

/// Frequency bin of a 1-based rank; None means out of vocabulary.
#[pyfunction]
#[pyo3(signature = (rank=None))]
fn frequency_bin(rank: Option<u64>) -> usize {
    features::frequency_bin(rank.map_or(Rank::Oov, Rank::Known))
}

#[pyfunction]
fn shape_flags(token: &str) -> Vec<f64> {
    features::shape_flags(token).to_vec()
}

/// Entity spans as `(start, end, type)`, end inclusive.
#[pyfunction]
fn spans(labels: Vec<String>) -> Vec<(usize, usize, String)> {
    spans_from_labels(&labels).into_iter().map(|s| (s.start, s.end, s.kind)).collect()
}

/// BIO to BIOSE; also returns the number of repaired stray I- tags.
#[pyfunction]
fn biose(labels: Vec<String>) -> (Vec<String>, usize) {
    to_biose(&labels)
}

#[pyfunction]
fn crf_log_partition(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>) -> PyResult<f64> {
    crf::log_partition(&matrix(emissions)?, &matrix(transitions)?).map_err(to_py)
}

#[pyfunction]
fn crf_score(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>, tags: Vec<usize>) -> PyResult<f64> {
    crf::sequence_score(&matrix(emissions)?, &matrix(transitions)?, &tags).map_err(to_py)
}

#[pyfunction]
fn crf_viterbi(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    crf::viterbi(&matrix(emissions)?, &matrix(transitions)?).map_err(to_py)
}

/// Paired permutation test on per-unit scores.
#[pyfunction]
#[pyo3(signature = (a, b, permutations=harness::DEFAULT_PERMUTATIONS, seed=0))]
fn permutation_test(py: Python<'_>, a: Vec<f64>, b: Vec<f64>, permutations: u64, seed: u64) -> PyResult<Py<PyAny>> {
    to_json(py, &harness::paired_permutation_test(&a, &b, permutations, seed).map_err(to_py)?)
}

/// Top-two principal components: dict with mean, components, variances, coords.
#[pyfunction]
fn pca(py: Python<'_>, points: Vec<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let p = harness::pca_export(&points).map_err(to_py)?;
    let value = serde_json::json!({
        "mean": p.mean,
        "components": p.components,
        "variances": p.variances,
        "coords": p.coords,
    });
    to_json(py, &value)
}

/// Held-out accuracy of a linear probe predicting `labels` from `samples`.
#[pyfunction]
#[pyo3(signature = (samples, labels, seed=0))]
fn probe_accuracy(samples: Vec<Vec<f64>>, labels: Vec<usize>, seed: u64) -> PyResult<f64> {
    let cfg = featmeta::adversarial::ProbeConfig { seed, ..Default::default() };
    featmeta::adversarial::probe_accuracy(&samples, &labels, &cfg).map_err(to_py)
}

/// Synthetic tagged corpus in CoNLL format, default generator settings.
#[pyfunction]
#[pyo3(signature = (sentences, seed=0))]
fn synth_conll(sentences: usize, seed: u64) -> PyResult<String> {
    Ok(write_conll(&synth_corpus(seed, sentences, &SynthSpec::default()).map_err(to_py)?))
}

#[pymodule]
fn featmeta_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FEATURE_DIM", FEATURE_DIM)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(shape_string, m)?)?;
    m.add_function(wrap_pyfunction!(frequency, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_bin, m)?)?;
    m.add_function(wrap_pyfunction!(shape_flags, m)?)?;
    m.add_function(wrap_pyfunction!(spans, m)?)?;
    m.add_function(wrap_pyfunction!(biose, m)?)?;
    m.add_function(wrap_pyfunction!(crf_log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(crf_score, m)?)?;
    m.add_function(wrap_pyfunction!(crf_viterbi, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(pca, m)?)?;
    m.add_function(wrap_pyfunction!(probe_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(synth_conll, m)?)?;
    Ok(())
}
