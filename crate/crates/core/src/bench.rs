//! Run configuration, the end-to-end benchmark pipeline and the two
//! scaling sweeps (data volume and shared width).

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use crate::ingest::{generate_synthetic, load_edges, load_features, load_negatives, FeatureTable, SyntheticSpec};
use crate::kge::{self, KgeConfig, KgeFamily, KgeParams};
use crate::metrics::{filtered_rank, render_table, EvalReport, RankSide, ScoredSet, TripleScorer};
use crate::negatives::{MixComponent, MixSpec, NegativePool};
use crate::split::{read_manifest, split_negatives, split_relation, write_manifest, SplitAudit, SplitConfig, SplitResult};
use crate::topo::{self, topo_parameter_count, DrugMode, MessageGraph, TopoConfig, TopoInputs, TopoModel, TopoParams};

/// Model selector: one of the five embedding families or the topological model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Kge(KgeFamily),
    Topo,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Kge(family) => family.fmt(f),
            ModelKind::Topo => f.write_str("topo"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("topo") {
            return Ok(ModelKind::Topo);
        }
        s.parse().map(ModelKind::Kge).map_err(|_| {
            Error::Config(format!(
                "unknown model `{s}` (expected transe, transr, rotate, complex, distmult or topo)"
            ))
        })
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.to_string()
    }
}

/// Negative mixes of the topological model, one per relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub drug_protein: Vec<(MixComponent, f64)>,
    pub drug_indication: Vec<(MixComponent, f64)>,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            drug_protein: MixSpec::drug_protein(0, 0).proportions,
            drug_indication: MixSpec::drug_indication(0, 0).proportions,
        }
    }
}

impl MixConfig {
    pub fn specs(&self) -> Vec<MixSpec> {
        [
            (Relation::DrugProtein, &self.drug_protein),
            (Relation::DrugIndication, &self.drug_indication),
        ]
        .into_iter()
        .map(|(relation, p)| MixSpec {
            relation,
            proportions: p.clone(),
            batch_size: 0,
            seed: 0,
        })
        .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Rank both the corrupted head and the corrupted tail of each test triple.
    pub both_sides: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub data_fractions: Vec<f64>,
    pub shared_dims: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            data_fractions: vec![0.25, 0.5, 0.75, 1.0],
            shared_dims: vec![64, 128, 192, 256, 512],
        }
    }
}

/// Everything a benchmark run depends on. `seed` overrides the seeds of the
/// split, KGE and topological sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub edges: Option<PathBuf>,
    pub negatives: Option<PathBuf>,
    pub protein_features: Option<PathBuf>,
    pub drug_features: Option<PathBuf>,
    /// Reused when it exists, written otherwise.
    pub manifest: Option<PathBuf>,
    /// Generated graph used instead of `edges`/`negatives`.
    pub synthetic: Option<SyntheticSpec>,
    pub out: PathBuf,
    pub model: ModelKind,
    pub seed: u64,
    pub data_fraction: f64,
    pub split: SplitConfig,
    pub kge: KgeConfig,
    pub topo: TopoConfig,
    pub mix: MixConfig,
    pub metrics: MetricConfig,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            edges: None,
            negatives: None,
            protein_features: None,
            drug_features: None,
            manifest: None,
            synthetic: None,
            out: PathBuf::from("runs"),
            model: ModelKind::Topo,
            seed: 0,
            data_fraction: 1.0,
            split: SplitConfig::default(),
            kge: KgeConfig::default(),
            topo: TopoConfig::default(),
            mix: MixConfig::default(),
            metrics: MetricConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.edges,
            &mut cfg.negatives,
            &mut cfg.protein_features,
            &mut cfg.drug_features,
            &mut cfg.manifest,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with the top-level seed pushed into every section.
    pub fn seeded(&self) -> RunConfig {
        let mut c = self.clone();
        c.split.seed = c.seed;
        c.kge.seed = c.seed;
        c.topo.seed = c.seed;
        c
    }

    /// Sets the width of whichever model is selected.
    pub fn set_dim(&mut self, dim: usize) {
        self.kge.entity_dim = dim;
        self.kge.relation_dim = dim;
        self.topo.shared_dim = dim;
    }

    pub fn dim(&self) -> usize {
        match self.model {
            ModelKind::Kge(_) => self.kge.entity_dim,
            ModelKind::Topo => self.topo.shared_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!("data_fraction {} outside (0, 1]", self.data_fraction)));
        }
        if self.edges.is_none() && self.synthetic.is_none() {
            return Err(Error::Config("set either `edges` or `synthetic`".into()));
        }
        self.split.validate()?;
        for spec in self.mix.specs() {
            spec.validate()?;
        }
        match self.model {
            ModelKind::Kge(_) => self.kge.validate(),
            ModelKind::Topo => self.topo.validate(),
        }
    }
}

/// Ingested and split data shared by every cell of a sweep.
#[derive(Debug)]
pub struct Prepared {
    pub graph: KnowledgeGraph,
    pub splits: Vec<SplitResult>,
    pub train_pool: NegativePool,
    pub test_pool: NegativePool,
    pub protein_features: Option<FeatureTable>,
    pub drug_features: Option<FeatureTable>,
    pub notes: Vec<String>,
}

impl Prepared {
    /// Training edges of every relation, relation by relation.
    pub fn train_edges(&self) -> Vec<Triple> {
        self.splits.iter().flat_map(|s| s.train.iter().copied()).collect()
    }

    pub fn split_of(&self, relation: Relation) -> Option<&SplitResult> {
        self.splits.iter().find(|s| s.relation == relation)
    }
}

/// Loads or generates the graph, splits every relation (or reads the
/// manifest) and splits the negative pool at the same cutoff.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let config = config.seeded();
    let mut notes = Vec::new();
    let (mut graph, pool) = match (&config.synthetic, &config.edges) {
        (Some(spec), _) => {
            notes.push(format!(
                "synthetic graph: {} blocks, p_in={}, p_out={}, seed {}",
                spec.n_blocks, spec.intra_block_edge_prob, spec.noise_edge_prob, spec.seed
            ));
            generate_synthetic(spec)?
        }
        (None, Some(path)) => {
            let mut g = KnowledgeGraph::new();
            load_edges(path, None, &mut g)?;
            let pool = match &config.negatives {
                Some(np) => {
                    let (pool, stats) = load_negatives(np, &g)?;
                    if stats.unknown_entity + stats.positive_collision > 0 {
                        notes.push(format!(
                            "negatives: dropped {} rows with unknown entities and {} positive collisions",
                            stats.unknown_entity, stats.positive_collision
                        ));
                    }
                    pool
                }
                None => NegativePool::new(),
            };
            (g, pool)
        }
        (None, None) => return Err(Error::Config("set either `edges` or `synthetic`".into())),
    };
    graph.freeze();

    let protein_features = match &config.protein_features {
        Some(p) => Some(load_features(p, EntityKind::Protein, &graph)?),
        None => None,
    };
    let drug_features = match &config.drug_features {
        Some(p) => Some(load_features(p, EntityKind::Drug, &graph)?),
        None => None,
    };

    let splits = match &config.manifest {
        Some(m) if m.exists() => {
            notes.push(format!("split read from manifest {}", m.display()));
            read_manifest(m, &graph)?
        }
        _ => Relation::ALL
            .iter()
            .map(|&r| split_relation(&graph, r, &config.split))
            .collect::<Result<Vec<_>>>()?,
    };
    let (train_pool, test_pool) = split_negatives(&pool, config.split.cutoff_year, config.split.default_year);
    let source = config.negatives.as_deref();
    let with_source = |p: NegativePool| match source {
        Some(s) => p.with_source(s),
        None => p,
    };
    Ok(Prepared {
        graph,
        splits,
        train_pool: with_source(train_pool),
        test_pool: with_source(test_pool),
        protein_features,
        drug_features,
        notes,
    })
}

/// Seeded uniform sample of ⌈fraction·N⌉ edges without replacement, taken
/// as a prefix of one permutation so smaller fractions nest in larger ones.
/// The subset keeps the input order.
pub fn subsample_training(edges: &[Triple], fraction: f64, seed: u64) -> Vec<Triple> {
    assert!(fraction > 0.0 && fraction <= 1.0, "fraction must lie in (0, 1]");
    let n = edges.len();
    let k = ((fraction * n as f64).ceil() as usize).min(n);
    if k == n {
        return edges.to_vec();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = idx[..k].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| edges[i]).collect()
}

/// Closed-form trainable parameter count of a KGE model.
pub fn kge_parameter_count(config: &KgeConfig, entity_counts: [usize; 3]) -> usize {
    let n_ent: usize = entity_counts.iter().sum();
    let n_rel = Relation::ALL.len();
    let w = config.relation_width();
    let proj = if config.family == KgeFamily::TransR {
        n_rel * w * config.entity_dim
    } else {
        0
    };
    n_ent * config.entity_dim + n_rel * w + proj
}

/// A trained model of either kind.
#[derive(Debug)]
pub enum TrainedModel {
    Kge(KgeParams),
    Topo(TopoModel),
}

impl TrainedModel {
    pub fn checkpoint(&self, config: &RunConfig, graph: &KnowledgeGraph) -> Checkpoint {
        let hash = graph.registry_hash();
        match self {
            TrainedModel::Kge(p) => Checkpoint::from_kge(p, &config.seeded().kge, &hash),
            TrainedModel::Topo(m) => Checkpoint::from_topo(&m.params, &m.config, m.inputs.counts(), &hash),
        }
    }
}

impl TripleScorer for TrainedModel {
    fn score_triple(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        match self {
            TrainedModel::Kge(p) => p.score_triple(head, relation, tail),
            TrainedModel::Topo(m) => m.logit(head, relation, tail),
        }
    }
}

/// Exact count of trainable scalars; fixed feature tables are excluded.
pub fn count_parameters(model: &TrainedModel) -> usize {
    match model {
        TrainedModel::Kge(p) => p.num_parameters(),
        TrainedModel::Topo(m) => m.params.num_parameters(),
    }
}

/// Uniform type-valid non-edges of `relation`, distinct, excluding every
/// positive of `graph`. Stops early if the candidate space runs dry.
pub fn random_non_edges(graph: &KnowledgeGraph, relation: Relation, n: usize, seed: u64) -> Vec<Triple> {
    let (hk, tk) = (relation.head_kind(), relation.tail_kind());
    let (nh, nt) = (graph.count(hk), graph.count(tk));
    let mut out = Vec::with_capacity(n);
    if nh == 0 || nt == 0 {
        return out;
    }
    let mut seen = std::collections::HashSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut misses = 0;
    while out.len() < n && misses < 10_000 {
        let h = EntityId::new(hk, rng.random_range(0..nh as u32));
        let t = EntityId::new(tk, rng.random_range(0..nt as u32));
        if graph.is_positive(h, relation, t) || !seen.insert((h, t)) {
            misses += 1;
            continue;
        }
        misses = 0;
        out.push(Triple::new(h, relation, t, None));
    }
    out
}

fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Bytes held by parameters, gradients, optimizer state, activations and
/// the graph, counted from the allocation sizes the run makes. Not an OS
/// measurement.
pub fn estimate_peak_memory(config: &RunConfig, parameters: usize, n_nodes: usize, n_edges: usize) -> usize {
    let f = std::mem::size_of::<f64>();
    let triple = std::mem::size_of::<Triple>();
    let graph = n_edges * (triple + 2 * std::mem::size_of::<u32>() + 32) + n_nodes * 64;
    let model = match config.model {
        ModelKind::Kge(_) => {
            let batch = config.kge.batch_size * (1 + config.kge.negatives_per_positive);
            parameters * f * 2 + batch * triple
        }
        ModelKind::Topo => {
            let sd = config.topo.shared_dim;
            let opt = match config.topo.optimizer {
                crate::optim::OptimizerKind::Sgd => 0,
                crate::optim::OptimizerKind::Adam => 2,
            };
            // per layer: cached [h ‖ m], pre-activation and output
            let activations = config.topo.layers.max(1) * n_nodes * 4 * sd * f;
            parameters * f * (2 + opt) + activations + 2 * n_nodes * sd * f
        }
    };
    graph + model
}

/// Outcome of one benchmark run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: ModelKind,
    pub seed: u64,
    pub dim: usize,
    pub data_fraction: f64,
    pub epochs: usize,
    pub train_edges: usize,
    pub parameters: usize,
    pub splits: Vec<(Relation, SplitAudit)>,
    pub relations: Vec<EvalReport>,
    pub wall_time_secs: f64,
    pub peak_memory_bytes: usize,
    pub notes: Vec<String>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "model {}  dim {}  seed {}  data {:.2}  train edges {}  params {}  epochs {}",
            self.model, self.dim, self.seed, self.data_fraction, self.train_edges, self.parameters, self.epochs
        );
        for (r, a) in &self.splits {
            let _ = writeln!(
                out,
                "split {:<16} total {} train {} (relocated {}) validation {} test {}",
                r.as_str(),
                a.total,
                a.train,
                a.relocated,
                a.validation,
                a.test
            );
        }
        out.push('\n');
        out.push_str(&render_table(&self.relations));
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let _ = writeln!(
            out,
            "# wall time {:.2}s, estimated peak memory {} bytes",
            self.wall_time_secs, self.peak_memory_bytes
        );
        out
    }
}

/// Everything a finished run produced in memory.
#[derive(Debug)]
pub struct RunOutput {
    pub report: BenchReport,
    pub model: TrainedModel,
    pub loss_trace: Vec<f64>,
    pub train_edges: Vec<Triple>,
}

fn train_model(config: &RunConfig, data: &Prepared, train: &[Triple], notes: &mut Vec<String>) -> Result<(TrainedModel, Vec<f64>)> {
    match config.model {
        ModelKind::Kge(family) => {
            let mut kc = config.kge.clone();
            kc.family = family;
            // corruption is filtered against training edges only
            let train_graph = data.graph.subgraph(train)?;
            let out = kge::train(&train_graph, train, &kc)?;
            Ok((TrainedModel::Kge(out.params), out.loss_trace))
        }
        ModelKind::Topo => {
            let mut tc = config.topo.clone();
            if tc.use_protein_features && data.protein_features.is_none() {
                tc.use_protein_features = false;
                notes.push("no protein feature file: proteins use learnable embeddings".into());
            }
            if tc.drug_mode == DrugMode::FixedVector && data.drug_features.is_none() {
                return Err(Error::MissingFeature("drug feature file (drug_mode = fixed_vector)".into()));
            }
            let mixes = config.mix.specs();
            let val_pos: Vec<Triple> = data.splits.iter().flat_map(|s| s.validation.iter().copied()).collect();
            let val_neg: Vec<Triple> = Relation::ALL
                .iter()
                .flat_map(|&r| {
                    let n = val_pos.iter().filter(|t| t.relation == r).count();
                    random_non_edges(&data.graph, r, n, derived_seed(config.seed, 11 + r.code() as u64))
                })
                .collect();
            let validation = (!val_pos.is_empty() && tc.patience > 0).then_some((val_pos.as_slice(), val_neg.as_slice()));
            let set = topo::TrainSet {
                known: &data.graph,
                train_edges: train,
                pool: &data.train_pool,
                mixes: &mixes,
                validation,
                drug_features: data.drug_features.as_ref(),
                protein_features: data.protein_features.as_ref(),
            };
            let out = topo::train_topo(&tc, &set)?;
            if let Some(b) = out.best_epoch {
                notes.push(format!(
                    "early stopping on validation PR-AUC (random non-edge negatives): best epoch {b}{}",
                    if out.stopped_early { ", stopped early" } else { "" }
                ));
            }
            Ok((TrainedModel::Topo(out.model), out.loss_trace))
        }
    }
}

/// Classification metrics over test positives and test-pool negatives, plus
/// filtered ranks of every test triple.
pub fn evaluate(config: &RunConfig, data: &Prepared, scorer: &dyn TripleScorer) -> Vec<EvalReport> {
    let mut reports = Vec::new();
    for split in &data.splits {
        let rel = split.relation;
        let start = Instant::now();
        let mut notes = Vec::new();
        let mut set = ScoredSet::default();
        for t in &split.test {
            set.push(scorer.score_triple(t.head, rel, t.tail), true);
        }
        let mut negs: Vec<Triple> = data.test_pool.of_relation(rel).copied().collect();
        if negs.is_empty() {
            negs = random_non_edges(&data.graph, rel, split.test.len(), derived_seed(config.seed, 101 + rel.code() as u64));
            notes.push(format!(
                "PR/ROC: test pool empty, {} seeded random non-edges used as negatives",
                negs.len()
            ));
        } else {
            notes.push(format!("PR/ROC: test positives vs {} verified test-pool negatives", negs.len()));
        }
        for t in &negs {
            set.push(scorer.score_triple(t.head, rel, t.tail), false);
        }
        let mut ranks = Vec::new();
        for t in &split.test {
            ranks.push(filtered_rank(scorer, t, &data.graph, RankSide::Tail));
            if config.metrics.both_sides {
                ranks.push(filtered_rank(scorer, t, &data.graph, RankSide::Head));
            }
        }
        notes.push(format!(
            "Hits@k/MRR: filtered {} ranking, ties at mean rank",
            if config.metrics.both_sides { "head and tail" } else { "tail" }
        ));
        let mut r = EvalReport::from_parts(rel, &set, &ranks, notes);
        r.wall_time_secs = start.elapsed().as_secs_f64();
        reports.push(r);
    }
    reports
}

/// The training edges a run with `config` uses after subsampling.
pub fn training_edges(config: &RunConfig, data: &Prepared) -> Vec<Triple> {
    let config = config.seeded();
    subsample_training(&data.train_edges(), config.data_fraction, derived_seed(config.seed, 7))
}

/// Trains and evaluates on already-prepared data without touching disk.
pub fn run_prepared(config: &RunConfig, data: &Prepared) -> Result<RunOutput> {
    config.validate()?;
    let config = config.seeded();
    let start = Instant::now();
    let mut notes = data.notes.clone();
    let all_train = data.train_edges();
    let train = training_edges(&config, data);
    if train.len() < all_train.len() {
        notes.push(format!(
            "training edges subsampled to {} of {} (fraction {})",
            train.len(),
            all_train.len(),
            config.data_fraction
        ));
    }
    let (model, loss_trace) = train_model(&config, data, &train, &mut notes)?;
    let relations = evaluate(&config, data, &model);
    let parameters = count_parameters(&model);
    let epochs = match config.model {
        ModelKind::Kge(_) => config.kge.epochs,
        ModelKind::Topo => config.topo.epochs,
    };
    let report = BenchReport {
        model: config.model,
        seed: config.seed,
        dim: config.dim(),
        data_fraction: config.data_fraction,
        epochs,
        train_edges: train.len(),
        parameters,
        splits: data.splits.iter().map(|s| (s.relation, s.audit)).collect(),
        relations,
        wall_time_secs: start.elapsed().as_secs_f64(),
        peak_memory_bytes: estimate_peak_memory(&config, parameters, data.graph.num_entities(), data.graph.num_edges()),
        notes,
    };
    Ok(RunOutput {
        report,
        model,
        loss_trace,
        train_edges: train,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the manifest, checkpoint, loss trace and both report forms into `dir`.
pub fn persist(dir: &Path, config: &RunConfig, data: &Prepared, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_manifest(&dir.join("manifest.tsv"), &data.graph, &data.splits)?;
    out.model.checkpoint(config, &data.graph).save(&dir.join("model.ckpt"))?;
    let mut trace = String::from("#epoch\tloss\n");
    for (i, l) in out.loss_trace.iter().enumerate() {
        let _ = writeln!(trace, "{i}\t{l:?}");
    }
    write_text(&dir.join("loss_trace.tsv"), &trace)?;
    write_text(&dir.join("report.json"), &out.report.to_json()?)?;
    write_text(&dir.join("report.txt"), &out.report.render())?;
    write_text(&dir.join("config.toml"), &config.to_toml()?)
}

/// Ingest, split, train, evaluate and persist every artifact under `config.out`.
pub fn run_benchmark(config: &RunConfig) -> Result<BenchReport> {
    config.validate()?;
    let data = prepare(config)?;
    let out = run_prepared(config, &data)?;
    persist(&config.out, config, &data, &out)?;
    Ok(out.report)
}

/// Rebuilds a trained model from a checkpoint against prepared data.
pub fn load_model(path: &Path, config: &RunConfig, data: &Prepared) -> Result<TrainedModel> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_registry(&data.graph.registry_hash())?;
    if ckpt.header.family == "topo" {
        let (params, tc): (TopoParams, TopoConfig) = ckpt.to_topo()?;
        let train = training_edges(config, data);
        let inputs = TopoInputs::new(&tc, &data.graph, data.drug_features.as_ref(), data.protein_features.as_ref())?;
        if topo_parameter_count(&tc, &inputs) != params.num_parameters() {
            return Err(Error::Checkpoint("tables do not match the model inputs".into()));
        }
        let graph = MessageGraph::from_edges(inputs.counts(), &train);
        Ok(TrainedModel::Topo(TopoModel::new(tc, params, inputs, graph)))
    } else {
        Ok(TrainedModel::Kge(ckpt.to_kge()?.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    /// Vary the training-data fraction at a fixed width.
    DataScaling,
    /// Vary the shared width on all training data.
    ParamScaling,
}

impl Track {
    pub fn as_str(self) -> &'static str {
        match self {
            Track::DataScaling => "data_scaling",
            Track::ParamScaling => "param_scaling",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    /// Data fraction or shared width, depending on the track.
    pub value: f64,
    pub train_edges: Option<usize>,
    pub parameters: Option<usize>,
    pub wall_time_secs: f64,
    pub report: Option<BenchReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub track: Track,
    pub model: ModelKind,
    pub seed: u64,
    /// Width for data scaling, fraction for parameter scaling.
    pub fixed: f64,
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let axis = match self.track {
            Track::DataScaling => "fraction",
            Track::ParamScaling => "dim",
        };
        let _ = writeln!(out, "{} ({}, seed {}, fixed {})", self.track.as_str(), self.model, self.seed, self.fixed);
        let _ = writeln!(
            out,
            "{axis:>8} {:>10} {:>10} {:>14} {:>14} {:>9}",
            "edges", "params", "DP Hits@10", "DI Hits@10", "time(s)"
        );
        for c in &self.cells {
            let hits = |r: Relation| {
                c.report
                    .as_ref()
                    .and_then(|rep| rep.relations.iter().find(|e| e.relation == r))
                    .and_then(|e| e.hits.get(&10))
                    .map_or_else(|| "-".to_string(), |h| format!("{h:.4}"))
            };
            let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
            let _ = writeln!(
                out,
                "{:>8} {:>10} {:>10} {:>14} {:>14} {:>9.2}",
                c.value,
                opt(c.train_edges),
                opt(c.parameters),
                hits(Relation::DrugProtein),
                hits(Relation::DrugIndication),
                c.wall_time_secs
            );
            if let Some(e) = &c.error {
                let _ = writeln!(out, "  error: {e}");
            }
        }
        out
    }
}

/// One benchmark per grid value with the other axis held fixed. Cell
/// failures are recorded and the sweep continues. Artifacts of each cell go
/// to `<out>/<track>/<value>/`; the sweep report to `<out>/<track>.json`.
pub fn run_sweep(config: &RunConfig, track: Track) -> Result<SweepReport> {
    config.validate()?;
    let values: Vec<f64> = match track {
        Track::DataScaling => config.sweep.data_fractions.clone(),
        Track::ParamScaling => config.sweep.shared_dims.iter().map(|&d| d as f64).collect(),
    };
    if values.is_empty() {
        return Err(Error::Config(format!("{} grid is empty", track.as_str())));
    }
    let data = prepare(config)?;
    let mut cells = Vec::with_capacity(values.len());
    for &value in &values {
        let mut cell_cfg = config.clone();
        match track {
            Track::DataScaling => cell_cfg.data_fraction = value,
            Track::ParamScaling => {
                cell_cfg.data_fraction = 1.0;
                cell_cfg.set_dim(value as usize);
            }
        }
        cell_cfg.out = config.out.join(track.as_str()).join(value.to_string());
        let start = Instant::now();
        let result = run_prepared(&cell_cfg, &data).and_then(|out| {
            persist(&cell_cfg.out, &cell_cfg, &data, &out)?;
            Ok(out.report)
        });
        let wall = start.elapsed().as_secs_f64();
        cells.push(match result {
            Ok(r) => SweepCell {
                value,
                train_edges: Some(r.train_edges),
                parameters: Some(r.parameters),
                wall_time_secs: wall,
                report: Some(r),
                error: None,
            },
            Err(e) => SweepCell {
                value,
                train_edges: None,
                parameters: None,
                wall_time_secs: wall,
                report: None,
                error: Some(e.to_string()),
            },
        });
    }
    let report = SweepReport {
        track,
        model: config.model,
        seed: config.seed,
        fixed: match track {
            Track::DataScaling => config.dim() as f64,
            Track::ParamScaling => 1.0,
        },
        cells,
    };
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&config.out.join(format!("{}.json", track.as_str())), &json)?;
    write_text(&config.out.join(format!("{}.txt", track.as_str())), &report.render())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(model: ModelKind) -> RunConfig {
        let mut c = RunConfig {
            synthetic: Some(SyntheticSpec::uniform(40, 4, 0.4, 0.02, 3)),
            model,
            seed: 5,
            ..RunConfig::default()
        };
        c.kge.entity_dim = 8;
        c.kge.relation_dim = 8;
        c.kge.epochs = 3;
        c.topo.shared_dim = 8;
        c.topo.layers = 2;
        c.topo.indication_init_dim = 4;
        c.topo.epochs = 3;
        c
    }

    fn edges(n: usize) -> Vec<Triple> {
        let mut g = KnowledgeGraph::new();
        for i in 0..n {
            g.add_triple(&format!("d{i}"), Relation::DrugProtein, "p", None).unwrap();
        }
        g.edges().to_vec()
    }

    #[test]
    fn subsample_counts_and_nesting() {
        let e = edges(10);
        assert_eq!(subsample_training(&e, 1.0, 3), e);
        assert_eq!(subsample_training(&e, 0.5, 3).len(), 5);
        assert_eq!(subsample_training(&e, 0.25, 3).len(), 3);
        let e = edges(101);
        let sets: Vec<Vec<Triple>> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&f| subsample_training(&e, f, 9))
            .collect();
        for w in sets.windows(2) {
            assert!(w[0].iter().all(|t| w[1].contains(t)));
        }
    }

    #[test]
    fn distmult_count_example() {
        let cfg = KgeConfig {
            family: KgeFamily::DistMult,
            entity_dim: 4,
            relation_dim: 4,
            ..KgeConfig::default()
        };
        assert_eq!(kge_parameter_count(&cfg, [4, 3, 3]), 48);
        let transr = KgeConfig {
            family: KgeFamily::TransR,
            ..cfg.clone()
        };
        let transe = KgeConfig {
            family: KgeFamily::TransE,
            ..cfg
        };
        // one 4x4 projection per relation on top of TransE
        assert_eq!(
            kge_parameter_count(&transr, [4, 3, 3]),
            kge_parameter_count(&transe, [4, 3, 3]) + 2 * 4 * 4
        );
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("topo".parse::<ModelKind>().unwrap(), ModelKind::Topo);
        assert_eq!("RotatE".parse::<ModelKind>().unwrap(), ModelKind::Kge(KgeFamily::RotatE));
        assert!("gcn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let c = tiny_config(ModelKind::Kge(KgeFamily::ComplEx));
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial = RunConfig::from_toml("model = \"distmult\"\nseed = 4\n[kge]\nentity_dim = 16\n").unwrap();
        assert_eq!(partial.kge.entity_dim, 16);
        assert_eq!(partial.kge.epochs, KgeConfig::default().epochs);
        assert!(RunConfig::from_toml("model = \"nope\"").is_err());
    }

    #[test]
    fn synthetic_run_populates_every_metric() {
        for model in [ModelKind::Kge(KgeFamily::DistMult), ModelKind::Topo] {
            let cfg = tiny_config(model);
            let data = prepare(&cfg).unwrap();
            let out = run_prepared(&cfg, &data).unwrap();
            assert_eq!(out.report.relations.len(), 2);
            for r in &out.report.relations {
                assert!(r.pr_auc.is_some() && r.roc_auc.is_some(), "{model} {:?}", out.report);
                assert!(r.n_ranked > 0 && r.hits.len() == 3);
                assert!(!r.notes.is_empty());
            }
            assert_eq!(out.report.parameters, count_parameters(&out.model));
            assert_eq!(out.loss_trace.len(), 3);
        }
    }

    #[test]
    fn missing_pool_surfaces_path() {
        let dir = tempfile::tempdir().unwrap();
        let edges = dir.path().join("edges.tsv");
        fs::write(&edges, "d1\tdrug_protein\tp1\t2001\nd2\tdrug_protein\tp2\t2001\nd1\tdrug_protein\tp2\t2001\n").unwrap();
        let negs = dir.path().join("negatives.tsv");
        fs::write(&negs, "#empty\n").unwrap();
        let mut cfg = tiny_config(ModelKind::Topo);
        cfg.synthetic = None;
        cfg.edges = Some(edges);
        cfg.negatives = Some(negs.clone());
        cfg.out = dir.path().join("out");
        match run_benchmark(&cfg) {
            Err(e @ Error::PoolExhausted { .. }) => assert!(e.to_string().contains(&negs.display().to_string())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_cells_follow_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(ModelKind::Topo);
        cfg.out = dir.path().to_path_buf();
        cfg.sweep.data_fractions = vec![0.25, 1.0];
        cfg.sweep.shared_dims = vec![4, 8];
        let data = run_sweep(&cfg, Track::DataScaling).unwrap();
        let n: Vec<usize> = data.cells.iter().map(|c| c.train_edges.unwrap()).collect();
        assert!((n[1] as f64 / 4.0 - n[0] as f64).abs() <= 1.0, "{n:?}");
        let params = run_sweep(&cfg, Track::ParamScaling).unwrap();
        let p: Vec<usize> = params.cells.iter().map(|c| c.parameters.unwrap()).collect();
        assert!(p[0] < p[1]);
        assert!(dir.path().join("param_scaling.json").exists());
        assert!(dir.path().join("data_scaling").join("0.25").join("model.ckpt").exists());
    }

    #[test]
    fn checkpoint_reload_scores_identically() {
        let dir = tempfile::tempdir().unwrap();
        for model in [ModelKind::Kge(KgeFamily::TransR), ModelKind::Topo] {
            let mut cfg = tiny_config(model);
            cfg.data_fraction = 0.5;
            cfg.out = dir.path().join(model.to_string());
            run_benchmark(&cfg).unwrap();
            let data = prepare(&cfg).unwrap();
            let out = run_prepared(&cfg, &data).unwrap();
            let loaded = load_model(&cfg.out.join("model.ckpt"), &cfg, &data).unwrap();
            for t in data.graph.edges().iter().take(50) {
                assert_eq!(
                    loaded.score_triple(t.head, t.relation, t.tail).to_bits(),
                    out.model.score_triple(t.head, t.relation, t.tail).to_bits()
                );
            }
        }
    }
}
