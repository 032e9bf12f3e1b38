//! Python bindings: graph construction and I/O, synthetic graphs, splits,
//! metrics, KGE training and scoring, and full benchmark runs.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kgbench::bench::{run_benchmark as run_bench, RunConfig};
use kgbench::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use kgbench::ingest::{generate_synthetic as gen, load_edges, SyntheticSpec};
use kgbench::kge::{self, KgeConfig, KgeParams};
use kgbench::metrics::{self, ScoredSet};
use kgbench::split::{split_relation, SplitConfig};
use kgbench::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::RejectionOverflow { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn relation(name: &str) -> PyResult<Relation> {
    name.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown relation `{name}`")))
}

fn kind(name: &str) -> PyResult<EntityKind> {
    EntityKind::ALL
        .into_iter()
        .find(|k| k.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown entity kind `{name}`")))
}

type EdgeRow = (String, String, String, Option<i32>);

fn rows(g: &KnowledgeGraph, edges: &[Triple]) -> Vec<EdgeRow> {
    edges
        .iter()
        .map(|t| (g.name(t.head).to_string(), t.relation.to_string(), g.name(t.tail).to_string(), t.year))
        .collect()
}

/// Typed drug/protein/indication graph.
#[pyclass(name = "Graph", module = "pykgbench")]
struct PyGraph {
    inner: KnowledgeGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new() -> Self {
        PyGraph {
            inner: KnowledgeGraph::new(),
        }
    }

    /// Reads an edge TSV (`head, relation, tail, year|NA`).
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut inner = KnowledgeGraph::new();
        load_edges(&path, None, &mut inner).map_err(py_err)?;
        Ok(PyGraph { inner })
    }

    /// Adds an edge; returns False when it was already present.
    #[pyo3(signature = (head, relation_name, tail, year=None))]
    fn add_edge(&mut self, head: &str, relation_name: &str, tail: &str, year: Option<i32>) -> PyResult<bool> {
        let before = self.inner.num_edges();
        self.inner
            .add_triple(head, relation(relation_name)?, tail, year)
            .map_err(py_err)?;
        Ok(self.inner.num_edges() > before)
    }

    fn has_edge(&self, head: &str, relation_name: &str, tail: &str) -> PyResult<bool> {
        let rel = relation(relation_name)?;
        Ok(match (self.inner.lookup(head), self.inner.lookup(tail)) {
            (Some(h), Some(t)) => self.inner.is_positive(h, rel, t),
            _ => false,
        })
    }

    fn count(&self, kind_name: &str) -> PyResult<usize> {
        Ok(self.inner.count(kind(kind_name)?))
    }

    fn edges(&self) -> Vec<EdgeRow> {
        rows(&self.inner, self.inner.edges())
    }

    fn freeze(&mut self) {
        self.inner.freeze();
    }

    fn registry_hash(&self) -> String {
        self.inner.registry_hash()
    }

    fn __len__(&self) -> usize {
        self.inner.num_edges()
    }

    fn __repr__(&self) -> String {
        let [d, p, i] = EntityKind::ALL.map(|k| self.inner.count(k));
        format!("Graph({d} drugs, {p} proteins, {i} indications, {} edges)", self.inner.num_edges())
    }
}

/// Planted-block graph; returns the graph and the size of its negative pool.
#[pyfunction]
#[pyo3(signature = (per_kind, n_blocks, intra, noise, seed=0))]
fn generate_synthetic(per_kind: usize, n_blocks: usize, intra: f64, noise: f64, seed: u64) -> PyResult<(PyGraph, usize)> {
    let spec = SyntheticSpec::uniform(per_kind, n_blocks, intra, noise, seed);
    let (inner, pool) = gen(&spec).map_err(py_err)?;
    Ok((PyGraph { inner }, pool.len()))
}

/// Splits one relation. Drug-protein is split by year; drug-indication
/// randomly unless `random_di` is False.
#[pyfunction]
#[pyo3(signature = (graph, relation_name, seed=0, cutoff_year=2022, random_di=true))]
fn split(
    graph: &PyGraph,
    relation_name: &str,
    seed: u64,
    cutoff_year: i32,
    random_di: bool,
) -> PyResult<(Vec<EdgeRow>, Vec<EdgeRow>, Vec<EdgeRow>, usize)> {
    let cfg = SplitConfig {
        seed,
        cutoff_year,
        di_random_split: random_di,
        ..SplitConfig::default()
    };
    let s = split_relation(&graph.inner, relation(relation_name)?, &cfg).map_err(py_err)?;
    let g = &graph.inner;
    Ok((rows(g, &s.train), rows(g, &s.validation), rows(g, &s.test), s.audit.relocated))
}

fn scored(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<ScoredSet> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(ScoredSet::new(scores, labels))
}

#[pyfunction]
fn pr_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::pr_auc(&scored(scores, labels)?).map_err(py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::roc_auc(&scored(scores, labels)?).map_err(py_err)
}

#[pyfunction]
fn hits_at_k(ranks: Vec<f64>, k: u32) -> f64 {
    metrics::hits_at_k(&ranks, k)
}

#[pyfunction]
fn mean_reciprocal_rank(ranks: Vec<f64>) -> f64 {
    metrics::mean_reciprocal_rank(&ranks)
}

/// A trained knowledge-graph embedding bound to its graph's registry.
#[pyclass(name = "KgeModel", module = "pykgbench")]
struct PyKge {
    params: KgeParams,
    graph: KnowledgeGraph,
    #[pyo3(get)]
    loss_trace: Vec<f64>,
}

#[pymethods]
impl PyKge {
    /// Trains on every edge of `graph`.
    #[staticmethod]
    #[pyo3(signature = (graph, family="transe", dim=32, epochs=100, learning_rate=0.01, margin=1.0, seed=0))]
    fn train(
        graph: &PyGraph,
        family: &str,
        dim: usize,
        epochs: usize,
        learning_rate: f64,
        margin: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = KgeConfig {
            family: family.parse().map_err(py_err)?,
            entity_dim: dim,
            relation_dim: dim,
            epochs,
            learning_rate,
            margin,
            seed,
            ..KgeConfig::default()
        };
        let edges = graph.inner.edges().to_vec();
        let out = kge::train(&graph.inner, &edges, &cfg).map_err(py_err)?;
        Ok(PyKge {
            params: out.params,
            graph: graph.inner.clone(),
            loss_trace: out.loss_trace,
        })
    }

    fn score(&self, head: &str, relation_name: &str, tail: &str) -> PyResult<f64> {
        let id = |name: &str| -> PyResult<EntityId> {
            self.graph
                .lookup(name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown entity `{name}`")))
        };
        let t = Triple::new(id(head)?, relation(relation_name)?, id(tail)?, None);
        self.params.score(&t).map_err(py_err)
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.num_parameters()
    }
}

/// Runs a full benchmark from a TOML configuration string and returns the
/// report as JSON. Artifacts go to the configured `out` directory.
#[pyfunction]
fn run_benchmark(config_toml: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml(config_toml).map_err(py_err)?;
    run_bench(&cfg).and_then(|r| r.to_json()).map_err(py_err)
}

#[pymodule]
fn pykgbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyKge>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(hits_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mean_reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
