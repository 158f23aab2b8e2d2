//! Python module `fbprop`: graphs, propagation, metrics and the ablation run.
//!
//! Structured results (stats, traces, reports) cross the boundary as plain
//! dicts and lists, decoded from the same JSON the CLI writes.

use std::collections::BTreeMap;
use std::sync::Arc;

use fbprop_core::config::{self, AttributeSchema as CoreSchema, PropagationConfig as CoreConfig};
use fbprop_core::eval::{self, HarnessConfig, Mode, PoolSource};
use fbprop_core::graph::{self, TransactionGraph};
use fbprop_core::propagation::{self as prop, ScoreState};
use fbprop_core::similarity::CosineSimilarity;
use fbprop_core::synth::{self, SynthParams};
use fbprop_core::{snapshot, AnnotationEvent};
use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "AttributeSchema", module = "fbprop", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchema {
    inner: CoreSchema,
}

#[pymethods]
impl PySchema {
    /// `weights` maps attribute name to weight, in the order attributes should be compared.
    #[new]
    #[pyo3(signature = (weights = None, hub_cap = config::DEFAULT_HUB_CAP))]
    fn new(weights: Option<Vec<(String, f64)>>, hub_cap: usize) -> PyResult<Self> {
        let inner = match weights {
            None => CoreSchema { hub_cap, ..CoreSchema::default() },
            Some(w) => CoreSchema::new(w, hub_cap).map_err(value_err)?,
        };
        let violations = inner.validate();
        if !violations.is_empty() {
            return Err(value_err(violations.join("; ")));
        }
        Ok(Self { inner })
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.inner.attributes.clone()
    }

    #[getter]
    fn weights(&self) -> BTreeMap<String, f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn hub_cap(&self) -> usize {
        self.inner.hub_cap
    }

    fn max_weight(&self) -> f64 {
        self.inner.max_possible_weight()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("AttributeSchema({})", self.inner)
    }
}

#[pyclass(name = "PropagationConfig", module = "fbprop", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (max_hops = config::DEFAULT_MAX_HOPS, epsilon = config::DEFAULT_EPSILON, seed_score = config::DEFAULT_SEED_SCORE, clamp_max = config::DEFAULT_CLAMP_MAX))]
    fn new(max_hops: usize, epsilon: f64, seed_score: f64, clamp_max: f64) -> PyResult<Self> {
        let inner = CoreConfig { max_hops, epsilon, seed_score, clamp_max };
        let violations = inner.validate();
        if !violations.is_empty() {
            return Err(value_err(violations.join("; ")));
        }
        Ok(Self { inner })
    }

    #[getter]
    fn max_hops(&self) -> usize {
        self.inner.max_hops
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn seed_score(&self) -> f64 {
        self.inner.seed_score
    }

    #[getter]
    fn clamp_max(&self) -> f64 {
        self.inner.clamp_max
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "PropagationConfig(max_hops={}, epsilon={}, seed_score={}, clamp_max={})",
            c.max_hops, c.epsilon, c.seed_score, c.clamp_max
        )
    }
}

/// Loads `(schema, propagation config)` from a JSON config file.
#[pyfunction]
fn load_config(path: &str) -> PyResult<(PySchema, PyConfig)> {
    let (schema, cfg) = config::load_config(path).map_err(value_err)?;
    Ok((PySchema { inner: schema }, PyConfig { inner: cfg }))
}

#[pyclass(name = "Graph", module = "fbprop", frozen)]
struct PyGraph {
    inner: Arc<TransactionGraph>,
}

impl PyGraph {
    fn wrap(g: TransactionGraph) -> Self {
        Self { inner: Arc::new(g) }
    }

    fn index(&self, id: &str) -> PyResult<usize> {
        self.inner.index_of(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))
    }
}

fn schema_or_default(schema: Option<&PySchema>) -> CoreSchema {
    schema.map(|s| s.inner.clone()).unwrap_or_default()
}

#[pymethods]
impl PyGraph {
    /// Builds a graph from ingestion-format records
    /// (`{"id", "ts", "attrs", "label", "features"}`).
    #[staticmethod]
    #[pyo3(signature = (records, schema = None))]
    fn from_records(py: Python<'_>, records: &Bound<'_, PyAny>, schema: Option<&PySchema>) -> PyResult<Self> {
        let schema = schema_or_default(schema);
        let dumps = py.import("json")?.getattr("dumps")?;
        let mut text = String::new();
        for r in records.try_iter()? {
            text.push_str(&dumps.call1((r?,))?.extract::<String>()?);
            text.push('\n');
        }
        let txs = graph::parse_jsonl(text.as_bytes(), &schema).map_err(value_err)?;
        let g = py.detach(|| graph::build_graph(txs, &schema)).map_err(value_err)?;
        Ok(Self::wrap(g))
    }

    #[staticmethod]
    #[pyo3(signature = (path, schema = None))]
    fn from_jsonl(py: Python<'_>, path: &str, schema: Option<&PySchema>) -> PyResult<Self> {
        let schema = schema_or_default(schema);
        py.detach(|| graph::ingest(path, &schema).and_then(|txs| graph::build_graph(txs, &schema)))
            .map(Self::wrap)
            .map_err(|e| match e {
                graph::GraphError::Io { .. } => PyIOError::new_err(e.to_string()),
                e => value_err(e),
            })
    }

    /// Generates a synthetic dataset with planted fraud rings.
    #[staticmethod]
    #[pyo3(signature = (n = 20_000, fraud_rate = 0.0107, seed = 0, schema = None))]
    fn synthetic(py: Python<'_>, n: usize, fraud_rate: f64, seed: u64, schema: Option<&PySchema>) -> PyResult<Self> {
        let schema = schema_or_default(schema);
        let p = SynthParams { n, fraud_rate, rng_seed: seed, ..Default::default() };
        let violations = p.validate();
        if !violations.is_empty() {
            return Err(value_err(violations.join("; ")));
        }
        let g = py
            .detach(|| synth::generate(&p, &schema).map_err(value_err).and_then(|t| graph::build_graph(t, &schema).map_err(value_err)))?;
        Ok(Self::wrap(g))
    }

    /// Reads a binary snapshot.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        snapshot::read(path).map(Self::wrap).map_err(|e| match e {
            snapshot::SnapshotError::Io(e) => PyIOError::new_err(e.to_string()),
            e => value_err(e),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        snapshot::write(&self.inner, path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        self.inner.index_of(id).is_some()
    }

    #[getter]
    fn schema(&self) -> PySchema {
        PySchema { inner: self.inner.schema().clone() }
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn avg_degree(&self) -> f64 {
        self.inner.avg_degree()
    }

    #[getter]
    fn max_weight(&self) -> f64 {
        self.inner.max_weight()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.nodes().iter().map(|t| t.id.clone()).collect()
    }

    /// Ground-truth labels by id; unlabeled nodes map to `None`.
    fn labels(&self) -> BTreeMap<String, Option<bool>> {
        self.inner.nodes().iter().map(|t| (t.id.clone(), t.label)).collect()
    }

    fn degree(&self, id: &str) -> PyResult<usize> {
        Ok(self.inner.degree(self.index(id)?))
    }

    /// `(neighbor id, edge weight)` pairs.
    fn neighbors(&self, id: &str) -> PyResult<Vec<(String, f64)>> {
        let i = self.index(id)?;
        Ok(self.inner.neighbors(i).map(|(j, w)| (self.inner.node(j).id.clone(), w)).collect())
    }

    /// Edge weight, or 0 when the nodes are not adjacent.
    fn weight(&self, a: &str, b: &str) -> PyResult<f64> {
        Ok(self.inner.weight_between(self.index(a)?, self.index(b)?).unwrap_or(0.0))
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.stats())
    }

    #[pyo3(signature = (id, hops = 2))]
    fn neighborhood(&self, py: Python<'_>, id: &str, hops: usize) -> PyResult<Py<PyAny>> {
        let sg = graph::neighborhood(&self.inner, id, hops).map_err(|e| PyKeyError::new_err(e.to_string()))?;
        to_py(py, &sg)
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={})", self.inner.len(), self.inner.edge_count())
    }
}

#[pyclass(name = "PropagationResult", module = "fbprop", frozen)]
struct PyPropagation {
    graph: Arc<TransactionGraph>,
    state: ScoreState,
    report: prop::PropagationReport,
}

#[pymethods]
impl PyPropagation {
    #[getter]
    fn hops(&self) -> usize {
        self.report.hops_executed
    }

    #[getter]
    fn converged(&self) -> bool {
        self.report.terminated_by == prop::Termination::Converged
    }

    #[getter]
    fn nodes_scored(&self) -> usize {
        self.report.nodes_scored
    }

    fn score(&self, id: &str) -> PyResult<f64> {
        let i = self.graph.index_of(id).ok_or_else(|| PyKeyError::new_err(id.to_string()))?;
        Ok(self.state.score(i))
    }

    #[pyo3(signature = (omit_zeros = false))]
    fn scores(&self, omit_zeros: bool) -> BTreeMap<String, f64> {
        prop::scores_snapshot(&self.graph, &self.state, omit_zeros)
    }

    fn seeds(&self) -> Vec<String> {
        self.state.seeds().map(|i| self.graph.node(i).id.clone()).collect()
    }

    /// The report as a dict: `hops`, `terminated_by`, `nodes_scored`, `trace`.
    fn report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.report)
    }

    fn __repr__(&self) -> String {
        format!(
            "PropagationResult(hops={}, terminated_by={:?}, nodes_scored={})",
            self.report.hops_executed, self.report.terminated_by, self.report.nodes_scored
        )
    }
}

/// Seeds `annotations` (`{node_id: score}`) and propagates.
#[pyfunction]
#[pyo3(signature = (graph, annotations, config = None))]
fn propagate(
    py: Python<'_>,
    graph: &PyGraph,
    annotations: BTreeMap<String, f64>,
    config: Option<&PyConfig>,
) -> PyResult<PyPropagation> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let events: Vec<AnnotationEvent> = annotations.into_iter().map(|(id, s)| AnnotationEvent::new(id, s)).collect();
    let g = Arc::clone(&graph.inner);
    let (state, report) = py
        .detach(|| {
            let sim = CosineSimilarity::new(&g);
            prop::run(&g, &events, &sim, &cfg)
        })
        .map_err(value_err)?;
    Ok(PyPropagation { graph: g, state, report })
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = 0.5))]
fn recall_at_threshold(scores: Vec<f64>, labels: Vec<bool>, threshold: f64) -> PyResult<f64> {
    eval::recall_at_threshold(&scores, &labels, threshold).map_err(value_err)
}

/// Runs the chronological ablation protocol with the simulated annotator and
/// returns one report dict per mode.
#[pyfunction]
#[pyo3(signature = (graph, modes = None, seed = 0, parts = 10, per_class = 150, noise = 0.0, pool_size = None, pool_source = "train", retrain_per_part = false, config = None))]
#[allow(clippy::too_many_arguments)]
fn run_ablation(
    py: Python<'_>,
    graph: &PyGraph,
    modes: Option<Vec<String>>,
    seed: u64,
    parts: usize,
    per_class: usize,
    noise: f64,
    pool_size: Option<usize>,
    pool_source: &str,
    retrain_per_part: bool,
    config: Option<&PyConfig>,
) -> PyResult<Py<PyAny>> {
    let modes: Vec<Mode> = match modes {
        None => Mode::ALL.to_vec(),
        Some(m) => m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(PyValueError::new_err)?,
    };
    let pool_source = match pool_source {
        "train" => PoolSource::Train,
        "val" => PoolSource::Val,
        other => return Err(value_err(format!("unknown pool_source '{other}' (expected train or val)"))),
    };
    let cfg = HarnessConfig { seed, parts, per_class, noise, pool_size, pool_source, retrain_per_part, ..Default::default() };
    let prop_cfg = config.map(|c| c.inner).unwrap_or_default();
    let g = TransactionGraph::clone(&graph.inner);
    let reports = py.detach(|| {
        let protocol = Arc::new(eval::Protocol::from_graph(g, prop_cfg, cfg)?);
        eval::run_protocol(&protocol, &modes).map(|o| o.reports)
    });
    to_py(py, &reports.map_err(value_err)?)
}

#[pymodule]
fn fbprop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyPropagation>()?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    m.add("MODES", Mode::ALL.map(|mode| mode.as_str()).to_vec())?;
    Ok(())
}
