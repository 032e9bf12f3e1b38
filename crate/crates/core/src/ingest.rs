//! Edge, feature and negative-pool file formats, plus the planted-block
//! synthetic graph generator.
//!
//! Edge file: `head<TAB>relation<TAB>tail<TAB>year` with `NA` for unknown years.
//! Feature file: `#dim=<D>` header, then `entity_id<TAB>f1,f2,...,fD`.
//! Negative file: `head<TAB>relation<TAB>tail<TAB>tier<TAB>year`.
//! Lines starting with `#` and blank lines are ignored everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_year, EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use crate::negatives::{NegativePool, Tier};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_year(path: &Path, line: usize, field: &str) -> Result<Option<i32>> {
    if field == "NA" {
        return Ok(None);
    }
    let y: i32 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad year `{field}`")))?;
    check_year(Some(y))?;
    Ok(Some(y))
}

fn format_year(year: Option<i32>) -> String {
    year.map_or_else(|| "NA".to_string(), |y| y.to_string())
}

/// Loads an edge TSV into `graph`. When `relation` is given, rows of any
/// other relation are rejected. Returns the number of new unique edges.
pub fn load_edges(path: &Path, relation: Option<Relation>, graph: &mut KnowledgeGraph) -> Result<usize> {
    let text = read(path)?;
    let before = graph.num_edges();
    for (n, line) in data_lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_err(path, n, format!("expected 4 columns, found {}", cols.len())));
        }
        let rel: Relation = cols[1]
            .parse()
            .map_err(|_| parse_err(path, n, format!("unknown relation `{}`", cols[1])))?;
        if relation.is_some_and(|r| r != rel) {
            return Err(parse_err(path, n, format!("relation `{rel}` does not match this file")));
        }
        let year = parse_year(path, n, cols[3])?;
        if cols[0].is_empty() || cols[2].is_empty() {
            return Err(parse_err(path, n, "empty entity id"));
        }
        graph.add_triple(cols[0], rel, cols[2], year)?;
    }
    Ok(graph.num_edges() - before)
}

pub fn write_edges<'a>(
    path: &Path,
    graph: &KnowledgeGraph,
    edges: impl IntoIterator<Item = &'a Triple>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#head\trelation\ttail\tyear").map_err(io)?;
    for t in edges {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            graph.name(t.head),
            t.relation,
            graph.name(t.tail),
            format_year(t.year)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Fixed feature vectors for one entity kind.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub kind: EntityKind,
    pub dim: usize,
    pub vectors: BTreeMap<u32, Vec<f64>>,
    /// Registered entities of `kind` without a vector.
    pub missing: Vec<u32>,
    /// Rows naming ids absent from the graph.
    pub skipped: usize,
}

impl FeatureTable {
    pub fn get(&self, index: u32) -> Option<&[f64]> {
        self.vectors.get(&index).map(Vec::as_slice)
    }
}

pub fn load_features(path: &Path, kind: EntityKind, graph: &KnowledgeGraph) -> Result<FeatureTable> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let dim = match lines.next() {
        Some((_, header)) => header
            .trim()
            .strip_prefix("#dim=")
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| parse_err(path, 1, "expected `#dim=<D>` header"))?,
        None => return Err(parse_err(path, 1, "empty feature file")),
    };
    let mut vectors = BTreeMap::new();
    let mut skipped = 0;
    for (i, line) in lines {
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `id<TAB>values`"))?;
        let v: Vec<f64> = values
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, n, format!("bad float: {e}")))?;
        if v.len() != dim {
            return Err(Error::DimMismatch {
                path: path.to_path_buf(),
                line: n,
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(parse_err(path, n, "non-finite feature value"));
        }
        match graph.lookup(id) {
            None => skipped += 1,
            Some(e) if e.kind != kind => {
                return Err(Error::KindConflict {
                    id: id.to_string(),
                    existing: e.kind,
                    requested: kind,
                })
            }
            Some(e) => {
                vectors.insert(e.index, v);
            }
        }
    }
    let missing = (0..graph.count(kind) as u32)
        .filter(|i| !vectors.contains_key(i))
        .collect();
    Ok(FeatureTable {
        kind,
        dim,
        vectors,
        missing,
        skipped,
    })
}

pub fn write_features(path: &Path, table: &FeatureTable, graph: &KnowledgeGraph) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#dim={}", table.dim).map_err(io)?;
    for (&idx, v) in &table.vectors {
        let vals: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        writeln!(
            w,
            "{}\t{}",
            graph.name(EntityId::new(table.kind, idx)),
            vals.join(",")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Counts from loading a negative file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NegativeLoadStats {
    pub loaded: usize,
    /// Rows whose entities are not registered in the graph.
    pub unknown_entity: usize,
    /// Rows that are known positives of the graph.
    pub positive_collision: usize,
    /// Rows repeating an earlier entry.
    pub duplicate: usize,
}

/// Loads a negative TSV. Rows are kept only if both entities exist in
/// `graph` and the triple is not one of its positives.
pub fn load_negatives(path: &Path, graph: &KnowledgeGraph) -> Result<(NegativePool, NegativeLoadStats)> {
    let text = read(path)?;
    let mut pool = NegativePool::new().with_source(path);
    let mut stats = NegativeLoadStats::default();
    for (n, line) in data_lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(path, n, format!("expected 5 columns, found {}", cols.len())));
        }
        let rel: Relation = cols[1]
            .parse()
            .map_err(|_| parse_err(path, n, format!("unknown relation `{}`", cols[1])))?;
        let tier: Tier = cols[3]
            .parse()
            .map_err(|_| parse_err(path, n, format!("unknown tier `{}`", cols[3])))?;
        let year = parse_year(path, n, cols[4])?;
        let (h, t) = match (graph.lookup(cols[0]), graph.lookup(cols[2])) {
            (Some(h), Some(t)) if h.kind == rel.head_kind() && t.kind == rel.tail_kind() => (h, t),
            (Some(_), Some(_)) => {
                return Err(parse_err(path, n, format!("entity kinds do not fit relation `{rel}`")))
            }
            _ => {
                stats.unknown_entity += 1;
                continue;
            }
        };
        let triple = Triple::new(h, rel, t, year);
        if graph.contains(&triple) {
            stats.positive_collision += 1;
        } else if pool.insert(tier, triple) {
            stats.loaded += 1;
        } else {
            stats.duplicate += 1;
        }
    }
    Ok((pool, stats))
}

pub fn write_negatives(path: &Path, pool: &NegativePool, graph: &KnowledgeGraph) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#head\trelation\ttail\ttier\tyear").map_err(io)?;
    for (tier, t) in pool.iter() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            graph.name(t.head),
            t.relation,
            graph.name(t.tail),
            tier,
            format_year(t.year)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parameters of the planted-block generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_drugs: usize,
    pub n_proteins: usize,
    pub n_indications: usize,
    pub n_blocks: usize,
    pub intra_block_edge_prob: f64,
    pub noise_edge_prob: f64,
    pub year_range: (i32, i32),
    pub seed: u64,
}

impl SyntheticSpec {
    /// Equal entity counts per kind and a 2000–2025 year range.
    pub fn uniform(per_kind: usize, n_blocks: usize, intra: f64, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            n_drugs: per_kind,
            n_proteins: per_kind,
            n_indications: per_kind,
            n_blocks,
            intra_block_edge_prob: intra,
            noise_edge_prob: noise,
            year_range: (2000, 2025),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.intra_block_edge_prob, self.noise_edge_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Spec("edge probabilities must lie in [0, 1]".into()));
        }
        if self.intra_block_edge_prob <= self.noise_edge_prob {
            return Err(Error::Spec("intra_block_edge_prob must exceed noise_edge_prob".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::Spec("n_blocks must be positive".into()));
        }
        if [self.n_drugs, self.n_proteins, self.n_indications]
            .iter()
            .any(|&c| c < self.n_blocks)
        {
            return Err(Error::Spec("every entity count must be >= n_blocks".into()));
        }
        let (lo, hi) = self.year_range;
        if lo > hi || check_year(Some(lo)).is_err() || check_year(Some(hi)).is_err() {
            return Err(Error::Spec(format!("bad year range ({lo}, {hi})")));
        }
        Ok(())
    }

    fn count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Drug => self.n_drugs,
            EntityKind::Protein => self.n_proteins,
            EntityKind::Indication => self.n_indications,
        }
    }

    /// Community of the `index`-th entity of `kind` (contiguous blocks).
    pub fn block_of(&self, kind: EntityKind, index: u32) -> usize {
        index as usize * self.n_blocks / self.count(kind)
    }
}

pub fn synthetic_name(kind: EntityKind, index: usize) -> String {
    let prefix = match kind {
        EntityKind::Drug => "D",
        EntityKind::Protein => "P",
        EntityKind::Indication => "I",
    };
    format!("{prefix}{index:05}")
}

/// Planted-block graph and a block-distance-tiered negative pool.
///
/// Drug-protein negatives all go to the verified tier; drug-indication
/// negatives in an adjacent block are hard, farther ones medium. Each tier
/// receives as many entries as the relation has positives (or every
/// candidate when there are fewer).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(KnowledgeGraph, NegativePool)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut g = KnowledgeGraph::new();
    for kind in EntityKind::ALL {
        for i in 0..spec.count(kind) {
            g.intern(kind, &synthetic_name(kind, i))?;
        }
    }
    let (lo, hi) = spec.year_range;
    for rel in Relation::ALL {
        let tk = rel.tail_kind();
        for h in 0..spec.n_drugs as u32 {
            for t in 0..spec.count(tk) as u32 {
                let same = spec.block_of(EntityKind::Drug, h) == spec.block_of(tk, t);
                let p = if same {
                    spec.intra_block_edge_prob
                } else {
                    spec.noise_edge_prob
                };
                if rng.random_bool(p) {
                    let year = rng.random_range(lo..=hi);
                    g.insert(Triple::new(
                        EntityId::new(EntityKind::Drug, h),
                        rel,
                        EntityId::new(tk, t),
                        Some(year),
                    ))?;
                }
            }
        }
    }

    let mut pool = NegativePool::new();
    for rel in Relation::ALL {
        let tk = rel.tail_kind();
        let n_pos = g.edges_of(rel).count();
        let mut hard = Vec::new();
        let mut medium = Vec::new();
        for h in 0..spec.n_drugs as u32 {
            for t in 0..spec.count(tk) as u32 {
                let (bh, bt) = (spec.block_of(EntityKind::Drug, h), spec.block_of(tk, t));
                let triple = Triple::new(EntityId::new(EntityKind::Drug, h), rel, EntityId::new(tk, t), None);
                if bh == bt || g.contains(&triple) {
                    continue;
                }
                if bh.abs_diff(bt) == 1 {
                    hard.push(triple);
                } else {
                    medium.push(triple);
                }
            }
        }
        let tiers: Vec<(Tier, Vec<Triple>)> = match rel {
            Relation::DrugProtein => {
                hard.extend(medium);
                vec![(Tier::Verified, hard)]
            }
            Relation::DrugIndication => vec![(Tier::Hard, hard), (Tier::Medium, medium)],
        };
        for (tier, mut candidates) in tiers {
            candidates.shuffle(&mut rng);
            candidates.truncate(n_pos);
            for mut t in candidates {
                t.year = Some(rng.random_range(lo..=hi));
                pool.insert(tier, t);
            }
        }
    }
    Ok((g, pool))
}

/// Fixed feature vectors correlated with the planted blocks: a scaled block
/// indicator in the leading coordinates plus uniform noise everywhere.
pub fn synthetic_features(
    spec: &SyntheticSpec,
    graph: &KnowledgeGraph,
    kind: EntityKind,
    dim: usize,
    seed: u64,
) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = BTreeMap::new();
    for e in graph.entities(kind) {
        let block = spec.block_of(kind, e.index);
        let v: Vec<f64> = (0..dim)
            .map(|j| {
                let signal = if j % spec.n_blocks == block { 1.0 } else { 0.0 };
                signal + rng.random_range(-0.25..0.25)
            })
            .collect();
        vectors.insert(e.index, v);
    }
    FeatureTable {
        kind,
        dim,
        vectors,
        missing: Vec::new(),
        skipped: 0,
    }
}

/// Paths of the files `synth` writes into an output directory.
#[derive(Clone, Debug)]
pub struct SyntheticFiles {
    pub edges: PathBuf,
    pub negatives: PathBuf,
    pub protein_features: Option<PathBuf>,
}

pub fn write_synthetic(
    dir: &Path,
    spec: &SyntheticSpec,
    feature_dim: usize,
) -> Result<(KnowledgeGraph, NegativePool, SyntheticFiles)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (g, pool) = generate_synthetic(spec)?;
    let files = SyntheticFiles {
        edges: dir.join("edges.tsv"),
        negatives: dir.join("negatives.tsv"),
        protein_features: (feature_dim > 0).then(|| dir.join("protein_features.tsv")),
    };
    write_edges(&files.edges, &g, g.edges())?;
    write_negatives(&files.negatives, &pool, &g)?;
    if let Some(p) = &files.protein_features {
        let table = synthetic_features(spec, &g, EntityKind::Protein, feature_dim, spec.seed ^ 0x5eed);
        write_features(p, &table, &g)?;
    }
    Ok((g, pool, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn duplicate_rows_count_once() {
        let f = temp_file(
            "# comment\nasp\tdrug_protein\tCOX1\t1999\nasp\tdrug_protein\tCOX1\t1999\nibu\tdrug_protein\tCOX2\t2001\n",
        );
        let mut g = KnowledgeGraph::new();
        assert_eq!(load_edges(f.path(), None, &mut g).unwrap(), 2);
    }

    #[test]
    fn na_year_is_unknown() {
        let f = temp_file("asp\tdrug_indication\tpain\tNA\n");
        let mut g = KnowledgeGraph::new();
        load_edges(f.path(), Some(Relation::DrugIndication), &mut g).unwrap();
        assert_eq!(g.edges()[0].year, None);
    }

    #[test]
    fn short_row_reports_line() {
        let f = temp_file("asp\tdrug_protein\tCOX1\t1999\nbad\trow\n");
        let mut g = KnowledgeGraph::new();
        match load_edges(f.path(), None, &mut g) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn relation_filter_mismatch() {
        let f = temp_file("asp\tdrug_protein\tCOX1\t1999\n");
        let mut g = KnowledgeGraph::new();
        assert!(load_edges(f.path(), Some(Relation::DrugIndication), &mut g).is_err());
    }

    fn feature_graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        g.add_triple("d", Relation::DrugProtein, "p1", None).unwrap();
        g.add_triple("d", Relation::DrugProtein, "p2", None).unwrap();
        g.add_triple("d", Relation::DrugProtein, "p3", None).unwrap();
        g
    }

    #[test]
    fn features_load() {
        let g = feature_graph();
        let f = temp_file("#dim=4\np1\t1,2,3,4\np2\t0.5,0.25,-1,1e-3\n");
        let t = load_features(f.path(), EntityKind::Protein, &g).unwrap();
        assert_eq!(t.dim, 4);
        assert_eq!(t.vectors.len(), 2);
        assert_eq!(t.missing, vec![2]);
        assert_eq!(t.get(1).unwrap(), &[0.5, 0.25, -1.0, 1e-3]);
    }

    #[test]
    fn feature_dim_mismatch() {
        let g = feature_graph();
        let f = temp_file("#dim=4\np1\t1,2,3\n");
        assert!(matches!(
            load_features(f.path(), EntityKind::Protein, &g),
            Err(Error::DimMismatch { expected: 4, found: 3, .. })
        ));
    }

    #[test]
    fn unknown_feature_row_is_skipped() {
        let g = feature_graph();
        let f = temp_file("#dim=2\nzzz\t1,2\np1\t1,2\n");
        let t = load_features(f.path(), EntityKind::Protein, &g).unwrap();
        assert_eq!(t.skipped, 1);
        assert_eq!(t.vectors.len(), 1);
    }

    #[test]
    fn negatives_drop_positives_and_unknowns() {
        let g = feature_graph();
        let f = temp_file(
            "d\tdrug_protein\tp1\tverified\t2010\nd\tdrug_protein\tpX\tverified\t2010\n",
        );
        let (pool, stats) = load_negatives(f.path(), &g).unwrap();
        assert!(pool.is_empty());
        assert_eq!(stats.positive_collision, 1);
        assert_eq!(stats.unknown_entity, 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec::uniform(40, 4, 0.3, 0.01, 7);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_synthetic(dir_a.path(), &spec, 0).unwrap();
        write_synthetic(dir_b.path(), &spec, 0).unwrap();
        for name in ["edges.tsv", "negatives.tsv"] {
            assert_eq!(
                fs::read(dir_a.path().join(name)).unwrap(),
                fs::read(dir_b.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn zero_noise_means_intra_block_only() {
        let spec = SyntheticSpec::uniform(40, 4, 0.3, 0.0, 3);
        let (g, _) = generate_synthetic(&spec).unwrap();
        assert!(g.num_edges() > 0);
        for t in g.edges() {
            assert_eq!(
                spec.block_of(t.head.kind, t.head.index),
                spec.block_of(t.tail.kind, t.tail.index)
            );
        }
    }

    #[test]
    fn invalid_spec() {
        let mut spec = SyntheticSpec::uniform(40, 4, 0.01, 0.3, 3);
        assert!(matches!(generate_synthetic(&spec), Err(Error::Spec(_))));
        spec = SyntheticSpec::uniform(3, 4, 0.3, 0.01, 3);
        assert!(matches!(generate_synthetic(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn edge_file_round_trip_preserves_edges() {
        let spec = SyntheticSpec::uniform(30, 3, 0.4, 0.02, 11);
        let (g, _) = generate_synthetic(&spec).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_edges(f.path(), &g, g.edges()).unwrap();
        let mut back = KnowledgeGraph::new();
        load_edges(f.path(), None, &mut back).unwrap();
        let names = |g: &KnowledgeGraph| {
            let mut v: Vec<(String, Relation, String, Option<i32>)> = g
                .edges()
                .iter()
                .map(|t| (g.name(t.head).to_string(), t.relation, g.name(t.tail).to_string(), t.year))
                .collect();
            v.sort();
            v
        };
        assert_eq!(names(&g), names(&back));
    }

    #[test]
    fn feature_file_round_trip_is_exact() {
        let spec = SyntheticSpec::uniform(12, 3, 0.4, 0.02, 1);
        let (g, _) = generate_synthetic(&spec).unwrap();
        let table = synthetic_features(&spec, &g, EntityKind::Protein, 6, 9);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_features(f.path(), &table, &g).unwrap();
        let back = load_features(f.path(), EntityKind::Protein, &g).unwrap();
        assert_eq!(back, table);
    }
}
