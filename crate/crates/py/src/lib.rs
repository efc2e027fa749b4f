//! Python bindings: scenario configs, end-to-end runs, the reproduction
//! sweeps and the standalone selection and aggregation primitives.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::fljam::adversary::{self, DivergenceRanking, SuccessProfile};
use ::fljam::channel;
use ::fljam::config;
use ::fljam::error::Error;
use ::fljam::experiments::{self, ReproduceOptions, RunCache};
use ::fljam::federation;
use ::fljam::harness;
use ::fljam::model::{self, Architecture, ModelWeights};
use ::fljam::rng::{substream, Stream};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::IncompleteObservation(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A scenario configuration in the flat `key = value` format.
#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyScenarioConfig {
    inner: config::ScenarioConfig,
}

#[pymethods]
impl PyScenarioConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        let inner = config::ScenarioConfig::parse(text).map_err(py_err)?;
        Ok(PyScenarioConfig { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = config::ScenarioConfig::load(&path).map_err(py_err)?;
        Ok(PyScenarioConfig { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value).map_err(py_err)?;
        next.validate().map_err(py_err)?;
        self.inner = next;
        Ok(())
    }

    #[getter]
    fn n_clients(&self) -> usize {
        self.inner.n_clients
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn scheme(&self) -> String {
        self.inner.scheme.to_string()
    }

    #[getter]
    fn attack_type(&self) -> String {
        self.inner.attack_type.to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(n_clients={}, rounds={}, attack_type={}, scheme={}, M={})",
            self.inner.n_clients, self.inner.rounds, self.inner.attack_type, self.inner.scheme, self.inner.budget_m
        )
    }
}

/// Flat parameter vector of the sensing classifier.
#[pyclass(name = "ModelWeights", from_py_object)]
#[derive(Clone)]
struct PyModelWeights {
    inner: ModelWeights,
}

#[pymethods]
impl PyModelWeights {
    #[staticmethod]
    fn from_list(params: Vec<f64>) -> PyResult<Self> {
        let inner = ModelWeights::from_flat(Architecture::sensing_classifier(), params).map_err(py_err)?;
        Ok(PyModelWeights { inner })
    }

    #[staticmethod]
    fn from_snapshot(text: &str) -> PyResult<Self> {
        Ok(PyModelWeights { inner: ModelWeights::from_snapshot(text).map_err(py_err)? })
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.as_slice().to_vec()
    }

    fn to_snapshot(&self) -> String {
        self.inner.to_snapshot()
    }

    /// Class probabilities for raw 32-value feature rows.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        rows.iter()
            .map(|x| {
                let logits = model::forward(&self.inner, x, false, 0.0, None).map_err(py_err)?;
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Ok(e.into_iter().map(|v| v / s).collect())
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.param_count()
    }
}

/// Outcome of one seeded end-to-end run.
#[pyclass(name = "TrainingRun", skip_from_py_object)]
struct PyTrainingRun {
    #[pyo3(get)]
    seed: u64,
    #[pyo3(get)]
    final_accuracy: f64,
    #[pyo3(get)]
    mean_budget: f64,
    #[pyo3(get)]
    final_local_accuracies: Vec<f64>,
    #[pyo3(get)]
    global_accuracies: Vec<f64>,
    #[pyo3(get)]
    budget_spent: Vec<usize>,
    #[pyo3(get)]
    observed_order: Option<Vec<usize>>,
    #[pyo3(get)]
    round_log: String,
    #[pyo3(get)]
    plan_dump: String,
    weights: ModelWeights,
}

#[pymethods]
impl PyTrainingRun {
    #[getter]
    fn final_weights(&self) -> PyModelWeights {
        PyModelWeights { inner: self.weights.clone() }
    }

    fn __repr__(&self) -> String {
        format!("TrainingRun(seed={}, final_accuracy={:.4}, mean_budget={:.4})", self.seed, self.final_accuracy, self.mean_budget)
    }
}

#[pyfunction]
fn parameter_count() -> usize {
    Architecture::sensing_classifier().param_count()
}

/// Fresh initial weights drawn from the model-initialization stream.
#[pyfunction]
fn init_weights(seed: u64) -> PyModelWeights {
    let mut rng = substream(seed, Stream::Init, 0);
    PyModelWeights { inner: model::init_weights(&Architecture::sensing_classifier(), &mut rng) }
}

#[pyfunction]
fn fedavg(models: Vec<PyModelWeights>) -> PyResult<PyModelWeights> {
    let refs: Vec<&ModelWeights> = models.iter().map(|m| &m.inner).collect();
    Ok(PyModelWeights { inner: federation::fedavg(&refs).map_err(py_err)? })
}

/// Reference geometry rows `(client_id, snr_db, phase_shift)`.
#[pyfunction]
fn table_geometry(n: usize) -> Vec<(usize, f64, f64)> {
    channel::table_geometry(n).iter().map(|g| (g.client_id, g.snr_db, g.phase_shift)).collect()
}

#[pyfunction]
fn run_training(py: Python<'_>, config: &PyScenarioConfig, seed: u64) -> PyResult<PyTrainingRun> {
    config.inner.validate().map_err(py_err)?;
    let cfg = config.inner.clone();
    let run = py.detach(move || harness::run_training(&cfg, seed)).map_err(py_err)?;
    Ok(PyTrainingRun {
        seed: run.seed,
        final_accuracy: run.final_accuracy,
        mean_budget: run.mean_budget,
        final_local_accuracies: run.final_local_accuracies.clone(),
        global_accuracies: run.records.iter().map(|r| r.global_accuracy).collect(),
        budget_spent: run.records.iter().map(|r| r.budget_spent).collect(),
        observed_order: run.observed_ranking.as_ref().map(|r| r.order().to_vec()),
        round_log: harness::format_round_log(&run.records, config.inner.n_clients),
        plan_dump: run.plan.dump(),
        weights: run.final_weights,
    })
}

/// Runs every configured seed and writes the result files; returns the
/// summary rows as `(scheme, attack_type, M, K, seed, final_accuracy,
/// mean_budget)` tuples.
type SummaryTuple = (String, String, f64, usize, u64, f64, f64);

#[pyfunction]
fn run_scenario(py: Python<'_>, config: &PyScenarioConfig, out_dir: PathBuf) -> PyResult<Vec<SummaryTuple>> {
    let cfg = config.inner.clone();
    let rows = py.detach(move || harness::run_scenario(&cfg, &out_dir)).map_err(py_err)?;
    Ok(rows.into_iter().map(|r| (r.scheme, r.attack_type, r.m, r.k, r.seed, r.final_accuracy, r.mean_budget)).collect())
}

#[pyfunction]
#[pyo3(signature = (name, out_dir, config = None, seeds = None, rounds = None, budgets = None))]
fn reproduce(
    py: Python<'_>,
    name: &str,
    out_dir: PathBuf,
    config: Option<&PyScenarioConfig>,
    seeds: Option<Vec<u64>>,
    rounds: Option<usize>,
    budgets: Option<Vec<f64>>,
) -> PyResult<Vec<PathBuf>> {
    let mut base = config.map(|c| c.inner.clone()).unwrap_or_default();
    if let Some(s) = seeds {
        base.seeds = s;
    }
    if let Some(r) = rounds {
        base.rounds = r;
    }
    let opts = ReproduceOptions { base, budgets };
    let name = name.to_string();
    py.detach(move || experiments::reproduce_experiment(&name, &opts, &mut RunCache::new(), &out_dir)).map_err(py_err)
}

#[pyfunction]
fn compare_rankings(a: Vec<usize>, b: Vec<usize>, k: usize) -> PyResult<usize> {
    harness::compare_rankings(&a, &b, k).map_err(py_err)
}

/// Uplink targets: the `m` clients with the largest divergence, or by the
/// diversity score when success probabilities are given.
#[pyfunction]
#[pyo3(signature = (divergence, m, p_uplink = None))]
fn select_uplink(divergence: Vec<f64>, m: usize, p_uplink: Option<Vec<f64>>) -> PyResult<Vec<usize>> {
    let ranking = DivergenceRanking::from_scores(divergence).map_err(py_err)?;
    let set = match p_uplink {
        None => adversary::select_uplink(&ranking, m),
        Some(p) => {
            let n = p.len();
            let profile = SuccessProfile::new(p, vec![1.0; n]).map_err(py_err)?;
            adversary::select_uplink_prob(&ranking, &profile, m)
        }
    }
    .map_err(py_err)?;
    Ok(set.into_iter().collect())
}

/// Downlink targets: the `m` clients with the smallest divergence, or the
/// smallest divergence over success probability when probabilities are given.
#[pyfunction]
#[pyo3(signature = (divergence, m, p_downlink = None))]
fn select_downlink(divergence: Vec<f64>, m: usize, p_downlink: Option<Vec<f64>>) -> PyResult<Vec<usize>> {
    let ranking = DivergenceRanking::from_scores(divergence).map_err(py_err)?;
    let set = match p_downlink {
        None => adversary::select_downlink(&ranking, m),
        Some(p) => {
            let n = p.len();
            let profile = SuccessProfile::new(vec![1.0; n], p).map_err(py_err)?;
            adversary::select_downlink_prob(&ranking, &profile, m)
        }
    }
    .map_err(py_err)?;
    Ok(set.into_iter().collect())
}

#[pymodule]
fn fljam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenarioConfig>()?;
    m.add_class::<PyModelWeights>()?;
    m.add_class::<PyTrainingRun>()?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(init_weights, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg, m)?)?;
    m.add_function(wrap_pyfunction!(table_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce, m)?)?;
    m.add_function(wrap_pyfunction!(compare_rankings, m)?)?;
    m.add_function(wrap_pyfunction!(select_uplink, m)?)?;
    m.add_function(wrap_pyfunction!(select_downlink, m)?)?;
    m.add("EXPERIMENTS", experiments::EXPERIMENTS.to_vec())?;
    Ok(())
}
