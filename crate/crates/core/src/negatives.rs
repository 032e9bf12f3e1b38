//! Verified-negative storage, the per-step mixed negative sampler, and
//! filtered corruption for margin training.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple, TripleKey};

/// Consecutive positive collisions tolerated before giving up.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Confirmed inactive (drug-protein).
    Verified,
    /// Late-phase trial failure (drug-indication).
    Hard,
    /// Early-phase trial failure (drug-indication).
    Medium,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Verified => "verified",
            Tier::Hard => "hard",
            Tier::Medium => "medium",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verified" => Ok(Tier::Verified),
            "hard" => Ok(Tier::Hard),
            "medium" => Ok(Tier::Medium),
            other => Err(Error::Config(format!("unknown negative tier `{other}`"))),
        }
    }
}

/// Tiered store of verified negative triples. Tiers are disjoint.
#[derive(Clone, Debug, Default)]
pub struct NegativePool {
    tiers: BTreeMap<(Relation, Tier), Vec<Triple>>,
    seen: HashSet<TripleKey>,
    source: Option<PathBuf>,
}

impl NegativePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_source(mut self, path: &Path) -> Self {
        self.source = Some(path.to_path_buf());
        self
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    /// Adds an entry; returns `false` (and stores nothing) when the triple is
    /// already present in any tier.
    pub fn insert(&mut self, tier: Tier, triple: Triple) -> bool {
        if !self.seen.insert(triple.key()) {
            return false;
        }
        self.tiers.entry((triple.relation, tier)).or_default().push(triple);
        true
    }

    pub fn tier(&self, relation: Relation, tier: Tier) -> &[Triple] {
        self.tiers.get(&(relation, tier)).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Tier, &Triple)> + '_ {
        self.tiers
            .iter()
            .flat_map(|((_, tier), v)| v.iter().map(move |t| (*tier, t)))
    }

    /// All entries of one relation, across tiers.
    pub fn of_relation(&self, relation: Relation) -> impl Iterator<Item = &Triple> + '_ {
        self.iter().filter(move |(_, t)| t.relation == relation).map(|(_, t)| t)
    }

    /// Drops entries that are known positives; returns how many were removed.
    pub fn retain_not_positive(&mut self, graph: &KnowledgeGraph) -> usize {
        let mut removed = 0;
        for v in self.tiers.values_mut() {
            let before = v.len();
            v.retain(|t| !graph.contains(t));
            removed += before - v.len();
        }
        self.seen = self.iter().map(|(_, t)| t.key()).collect();
        removed
    }

    /// Same entries restricted by a predicate; the source path is kept.
    pub fn filtered(&self, mut keep: impl FnMut(&Triple) -> bool) -> NegativePool {
        let mut out = NegativePool {
            source: self.source.clone(),
            ..NegativePool::default()
        };
        for (tier, t) in self.iter() {
            if keep(t) {
                out.insert(tier, *t);
            }
        }
        out
    }
}

/// Entities with at least one positive training edge, per kind, sorted.
#[derive(Clone, Debug, Default)]
pub struct ActiveNodes {
    by_kind: [Vec<u32>; 3],
}

impl ActiveNodes {
    pub fn from_edges<'a>(edges: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut sets: [std::collections::BTreeSet<u32>; 3] = Default::default();
        for t in edges {
            sets[t.head.kind.code()].insert(t.head.index);
            sets[t.tail.kind.code()].insert(t.tail.index);
        }
        ActiveNodes {
            by_kind: sets.map(|s| s.into_iter().collect()),
        }
    }

    pub fn nodes(&self, kind: EntityKind) -> &[u32] {
        &self.by_kind[kind.code()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixComponent {
    Pool(Tier),
    Random,
}

/// Proportions of each negative source within one sampled batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub relation: Relation,
    pub proportions: Vec<(MixComponent, f64)>,
    pub batch_size: usize,
    pub seed: u64,
}

impl MixSpec {
    /// 50% verified inactive pairs, 50% random pairs.
    pub fn drug_protein(batch_size: usize, seed: u64) -> Self {
        MixSpec {
            relation: Relation::DrugProtein,
            proportions: vec![
                (MixComponent::Pool(Tier::Verified), 0.5),
                (MixComponent::Random, 0.5),
            ],
            batch_size,
            seed,
        }
    }

    /// One third each of hard, medium and random pairs.
    pub fn drug_indication(batch_size: usize, seed: u64) -> Self {
        MixSpec {
            relation: Relation::DrugIndication,
            proportions: vec![
                (MixComponent::Pool(Tier::Hard), 1.0 / 3.0),
                (MixComponent::Pool(Tier::Medium), 1.0 / 3.0),
                (MixComponent::Random, 1.0 / 3.0),
            ],
            batch_size,
            seed,
        }
    }

    pub fn random_only(relation: Relation, batch_size: usize, seed: u64) -> Self {
        MixSpec {
            relation,
            proportions: vec![(MixComponent::Random, 1.0)],
            batch_size,
            seed,
        }
    }

    /// Default mix for a relation.
    pub fn default_for(relation: Relation, batch_size: usize, seed: u64) -> Self {
        match relation {
            Relation::DrugProtein => Self::drug_protein(batch_size, seed),
            Relation::DrugIndication => Self::drug_indication(batch_size, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.proportions.iter().any(|&(_, f)| !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config("mix fractions must be finite and >= 0".into()));
        }
        let total: f64 = self.proportions.iter().map(|&(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mix fractions sum to {total}, expected 1")));
        }
        let mut seen = HashSet::new();
        if !self.proportions.iter().all(|(c, _)| seen.insert(*c)) {
            return Err(Error::Config("mix lists a component twice".into()));
        }
        Ok(())
    }

    /// Per-component counts for a batch of `n`: pool tiers get
    /// round(fraction * n), the random tier takes the remainder.
    pub fn counts(&self, n: usize) -> Vec<(MixComponent, usize)> {
        let mut out = Vec::with_capacity(self.proportions.len() + 1);
        let mut used = 0usize;
        for &(c, f) in &self.proportions {
            if let MixComponent::Pool(_) = c {
                let k = ((f * n as f64).round() as usize).min(n - used);
                used += k;
                out.push((c, k));
            }
        }
        out.push((MixComponent::Random, n - used));
        out
    }
}

/// Draws a fresh negative batch per training step. Owns its RNG.
#[derive(Clone, Debug)]
pub struct MixedSampler {
    spec: MixSpec,
    rng: ChaCha8Rng,
}

impl MixedSampler {
    pub fn new(spec: MixSpec) -> Result<Self> {
        spec.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(MixedSampler { spec, rng })
    }

    pub fn spec(&self) -> &MixSpec {
        &self.spec
    }

    /// Batch of `spec.batch_size` negatives.
    pub fn sample(
        &mut self,
        pool: &NegativePool,
        positives: &KnowledgeGraph,
        active: &ActiveNodes,
    ) -> Result<Vec<Triple>> {
        let n = self.spec.batch_size;
        self.sample_n(n, pool, positives, active)
    }

    pub fn sample_n(
        &mut self,
        n: usize,
        pool: &NegativePool,
        positives: &KnowledgeGraph,
        active: &ActiveNodes,
    ) -> Result<Vec<Triple>> {
        Ok(self
            .sample_labeled(n, pool, positives, active)?
            .into_iter()
            .map(|(_, t)| t)
            .collect())
    }

    /// Like `sample_n`, tagging each negative with the source it came from.
    /// `positives` must be the full positive set (train, validation and test).
    pub fn sample_labeled(
        &mut self,
        n: usize,
        pool: &NegativePool,
        positives: &KnowledgeGraph,
        active: &ActiveNodes,
    ) -> Result<Vec<(MixComponent, Triple)>> {
        let relation = self.spec.relation;
        let mut out = Vec::with_capacity(n);
        for (component, k) in self.spec.counts(n) {
            match component {
                MixComponent::Pool(tier) => {
                    if k == 0 {
                        continue;
                    }
                    let entries = pool.tier(relation, tier);
                    if entries.is_empty() {
                        return Err(Error::PoolExhausted {
                            relation,
                            tier,
                            source_path: pool.source().map(Path::to_path_buf),
                        });
                    }
                    for _ in 0..k {
                        let t = entries[self.rng.random_range(0..entries.len())];
                        debug_assert!(!positives.contains(&t));
                        out.push((component, t));
                    }
                }
                MixComponent::Random => {
                    for _ in 0..k {
                        let t = random_negative(relation, positives, active, &mut self.rng)?;
                        out.push((component, t));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn random_negative<R: Rng + ?Sized>(
    relation: Relation,
    positives: &KnowledgeGraph,
    active: &ActiveNodes,
    rng: &mut R,
) -> Result<Triple> {
    let heads = active.nodes(relation.head_kind());
    let tails = active.nodes(relation.tail_kind());
    if heads.is_empty() || tails.is_empty() {
        return Err(Error::Config(format!(
            "no active nodes to draw random {relation} negatives from"
        )));
    }
    for _ in 0..MAX_REJECTIONS {
        let h = EntityId::new(relation.head_kind(), heads[rng.random_range(0..heads.len())]);
        let t = EntityId::new(relation.tail_kind(), tails[rng.random_range(0..tails.len())]);
        if !positives.is_positive(h, relation, t) {
            return Ok(Triple::new(h, relation, t, None));
        }
    }
    Err(Error::RejectionOverflow {
        attempts: MAX_REJECTIONS,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Head,
    Tail,
}

/// Replaces the head or tail with a uniformly drawn entity of the same kind
/// such that the result is not a known positive of `graph`.
pub fn corrupt_filtered<R: Rng + ?Sized>(
    triple: &Triple,
    graph: &KnowledgeGraph,
    side: Side,
    rng: &mut R,
) -> Result<Triple> {
    let kind = match side {
        Side::Head => triple.relation.head_kind(),
        Side::Tail => triple.relation.tail_kind(),
    };
    let n = graph.count(kind);
    if n < 2 {
        return Err(Error::IndexOutOfRange(format!(
            "corruption needs at least two {} entities, graph has {n}",
            kind.as_str()
        )));
    }
    for _ in 0..MAX_REJECTIONS {
        let e = EntityId::new(kind, rng.random_range(0..n as u32));
        let candidate = match side {
            Side::Head => Triple::new(e, triple.relation, triple.tail, None),
            Side::Tail => Triple::new(triple.head, triple.relation, e, None),
        };
        if !graph.contains(&candidate) && candidate.key() != triple.key() {
            return Ok(candidate);
        }
    }
    Err(Error::RejectionOverflow {
        attempts: MAX_REJECTIONS,
    })
}
