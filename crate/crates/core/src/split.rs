//! Temporal and random train/validation/test splits with cold-start
//! relocation, plus time-splitting of the negative pool.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Relation, Triple};
use crate::negatives::NegativePool;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub cutoff_year: i32,
    pub default_year: i32,
    pub val_test_ratio: f64,
    /// Split drug-indication edges randomly instead of by time.
    pub di_random_split: bool,
    /// (train, validation, test) ratios for random splits.
    pub random_ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            cutoff_year: 2022,
            default_year: 2000,
            val_test_ratio: 0.5,
            di_random_split: true,
            random_ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.val_test_ratio > 0.0 && self.val_test_ratio < 1.0) {
            return Err(Error::Config("val_test_ratio must lie in (0, 1)".into()));
        }
        let (a, b, c) = self.random_ratios;
        if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config("random split ratios must be in [0, 1] and sum to 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub total: usize,
    /// Train edges before relocation (historical edges for a temporal split).
    pub initial_train: usize,
    pub relocated: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Every held-out candidate was relocated.
    pub empty_test_pool: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub relation: Relation,
    pub train: Vec<Triple>,
    pub validation: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Held-out candidates moved into `train`; also contained in `train`.
    pub relocated: Vec<Triple>,
    pub audit: SplitAudit,
}

/// First present year in priority order, else `default_year`.
pub fn resolve_timestamp(candidates: &[Option<i32>], default_year: i32) -> i32 {
    candidates.iter().flatten().copied().next().unwrap_or(default_year)
}

/// Moves every held-out edge touching an entity with no train edge into
/// train, repeating until nothing moves. Returns the moved edges in
/// their original order.
fn relocate_cold_start(train: &mut Vec<Triple>, held_out: &mut Vec<Triple>) -> Vec<Triple> {
    let mut seen: HashSet<EntityId> = HashSet::new();
    for t in train.iter() {
        seen.insert(t.head);
        seen.insert(t.tail);
    }
    let mut relocated = Vec::new();
    loop {
        // decide against a snapshot of `seen` so the outcome is independent of edge order
        let (cold, warm): (Vec<Triple>, Vec<Triple>) = held_out
            .drain(..)
            .partition(|t| !seen.contains(&t.head) || !seen.contains(&t.tail));
        *held_out = warm;
        if cold.is_empty() {
            break;
        }
        for t in &cold {
            seen.insert(t.head);
            seen.insert(t.tail);
        }
        train.extend_from_slice(&cold);
        relocated.extend(cold);
    }
    relocated
}

fn relation_edges(graph: &KnowledgeGraph, relation: Relation) -> Vec<Triple> {
    graph.edges_of(relation).copied().collect()
}

/// Train on edges dated at or before the cutoff; hold out later edges after
/// cold-start relocation, shuffled and divided into validation and test.
pub fn temporal_split(graph: &KnowledgeGraph, relation: Relation, config: &SplitConfig) -> Result<SplitResult> {
    config.validate()?;
    let edges = relation_edges(graph, relation);
    let total = edges.len();
    let (mut train, mut pool): (Vec<Triple>, Vec<Triple>) = edges
        .into_iter()
        .partition(|t| t.resolved_year(config.default_year) <= config.cutoff_year);
    let initial_train = train.len();
    let had_pool = !pool.is_empty();
    let relocated = relocate_cold_start(&mut train, &mut pool);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    pool.shuffle(&mut rng);
    let n_val = ((pool.len() as f64) * config.val_test_ratio).round() as usize;
    let test = pool.split_off(n_val.min(pool.len()));
    let validation = pool;
    Ok(finish(relation, train, validation, test, relocated, total, initial_train, had_pool))
}

/// Seeded random partition by `config.random_ratios`, followed by the same
/// cold-start relocation as the temporal split.
pub fn random_split(graph: &KnowledgeGraph, relation: Relation, config: &SplitConfig) -> Result<SplitResult> {
    config.validate()?;
    let mut edges = relation_edges(graph, relation);
    let total = edges.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    edges.shuffle(&mut rng);
    let (rt, rv, _) = config.random_ratios;
    let n_train = ((total as f64) * rt).round() as usize;
    let n_val = (((total as f64) * rv).round() as usize).min(total - n_train.min(total));
    let mut rest = edges.split_off(n_train.min(total));
    let mut train = edges;
    let initial_train = train.len();
    let had_pool = !rest.is_empty();

    // relocate across val and test jointly, then restore the assignment
    let mut bucket: HashMap<_, bool> = HashMap::new();
    for (i, t) in rest.iter().enumerate() {
        bucket.insert(t.key(), i < n_val);
    }
    let relocated = relocate_cold_start(&mut train, &mut rest);
    let (validation, test): (Vec<Triple>, Vec<Triple>) = rest.into_iter().partition(|t| bucket[&t.key()]);
    Ok(finish(relation, train, validation, test, relocated, total, initial_train, had_pool))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    relation: Relation,
    train: Vec<Triple>,
    validation: Vec<Triple>,
    test: Vec<Triple>,
    relocated: Vec<Triple>,
    total: usize,
    initial_train: usize,
    had_pool: bool,
) -> SplitResult {
    let audit = SplitAudit {
        total,
        initial_train,
        relocated: relocated.len(),
        train: train.len(),
        validation: validation.len(),
        test: test.len(),
        empty_test_pool: had_pool && validation.is_empty() && test.is_empty(),
    };
    SplitResult {
        relation,
        train,
        validation,
        test,
        relocated,
        audit,
    }
}

/// Splits per `config`: drug-protein always by time, drug-indication by time
/// or randomly depending on `di_random_split`.
pub fn split_relation(graph: &KnowledgeGraph, relation: Relation, config: &SplitConfig) -> Result<SplitResult> {
    match relation {
        Relation::DrugIndication if config.di_random_split => random_split(graph, relation, config),
        _ => temporal_split(graph, relation, config),
    }
}

/// Negatives dated at or before the cutoff go to the training pool; later
/// ones to the test pool. Unknown years resolve to `default_year`.
pub fn split_negatives(pool: &NegativePool, cutoff_year: i32, default_year: i32) -> (NegativePool, NegativePool) {
    let train = pool.filtered(|t| t.resolved_year(default_year) <= cutoff_year);
    let test = pool.filtered(|t| t.resolved_year(default_year) > cutoff_year);
    (train, test)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    Train,
    Validation,
    Test,
}

impl Bucket {
    fn as_str(self) -> &'static str {
        match self {
            Bucket::Train => "train",
            Bucket::Validation => "validation",
            Bucket::Test => "test",
        }
    }
}

/// Writes `head, relation, tail, year, bucket, relocated` rows for every split.
pub fn write_manifest(path: &Path, graph: &KnowledgeGraph, splits: &[SplitResult]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#head\trelation\ttail\tyear\tbucket\trelocated").map_err(io)?;
    for s in splits {
        let moved: HashSet<_> = s.relocated.iter().map(Triple::key).collect();
        let rows = s
            .train
            .iter()
            .map(|t| (t, Bucket::Train))
            .chain(s.validation.iter().map(|t| (t, Bucket::Validation)))
            .chain(s.test.iter().map(|t| (t, Bucket::Test)));
        for (t, b) in rows {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                graph.name(t.head),
                t.relation,
                graph.name(t.tail),
                t.year.map_or_else(|| "NA".to_string(), |y| y.to_string()),
                b.as_str(),
                u8::from(moved.contains(&t.key()))
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a manifest back into per-relation splits over `graph`'s registry.
/// Every row must name an existing edge.
pub fn read_manifest(path: &Path, graph: &KnowledgeGraph) -> Result<Vec<SplitResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut by_rel: Vec<(Relation, [Vec<Triple>; 3], Vec<Triple>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(perr(n, format!("expected 6 columns, found {}", cols.len())));
        }
        let rel: Relation = cols[1].parse().map_err(|_| perr(n, format!("bad relation `{}`", cols[1])))?;
        let (h, t) = match (graph.lookup(cols[0]), graph.lookup(cols[2])) {
            (Some(h), Some(t)) => (h, t),
            _ => return Err(perr(n, "unknown entity".into())),
        };
        let stored = graph
            .get(&Triple::new(h, rel, t, None))
            .copied()
            .ok_or_else(|| perr(n, "row is not an edge of the graph".into()))?;
        let b = match cols[4] {
            "train" => 0,
            "validation" => 1,
            "test" => 2,
            other => return Err(perr(n, format!("bad bucket `{other}`"))),
        };
        let idx = match by_rel.iter().position(|(r, ..)| *r == rel) {
            Some(i) => i,
            None => {
                by_rel.push((rel, Default::default(), Vec::new()));
                by_rel.len() - 1
            }
        };
        by_rel[idx].1[b].push(stored);
        if cols[5] == "1" {
            by_rel[idx].2.push(stored);
        }
    }
    Ok(by_rel
        .into_iter()
        .map(|(relation, [train, validation, test], relocated)| {
            let audit = SplitAudit {
                total: train.len() + validation.len() + test.len(),
                initial_train: train.len() - relocated.len(),
                relocated: relocated.len(),
                train: train.len(),
                validation: validation.len(),
                test: test.len(),
                empty_test_pool: false,
            };
            SplitResult {
                relation,
                train,
                validation,
                test,
                relocated,
                audit,
            }
        })
        .collect())
}
