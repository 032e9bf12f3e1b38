//! Typed entity/relation registries, edge storage and the positive-membership oracle.
//!
//! Entities are interned per kind with dense indices. A global row index
//! (drugs first, then proteins, then indications) is used by the embedding
//! tables of the models.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Drug,
    Protein,
    Indication,
}

impl EntityKind {
    pub const ALL: [EntityKind; 3] = [EntityKind::Drug, EntityKind::Protein, EntityKind::Indication];

    pub fn code(self) -> usize {
        match self {
            EntityKind::Drug => 0,
            EntityKind::Protein => 1,
            EntityKind::Indication => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Drug => "drug",
            EntityKind::Protein => "protein",
            EntityKind::Indication => "indication",
        }
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drug" => Ok(EntityKind::Drug),
            "protein" => Ok(EntityKind::Protein),
            "indication" => Ok(EntityKind::Indication),
            other => Err(Error::Config(format!("unknown entity kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId {
    pub kind: EntityKind,
    pub index: u32,
}

impl EntityId {
    pub fn new(kind: EntityKind, index: u32) -> Self {
        EntityId { kind, index }
    }
}

/// Relation registry. Integer codes are stable and used in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    DrugProtein,
    DrugIndication,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::DrugProtein, Relation::DrugIndication];

    pub fn code(self) -> usize {
        match self {
            Relation::DrugProtein => 0,
            Relation::DrugIndication => 1,
        }
    }

    pub fn from_code(code: usize) -> Option<Relation> {
        Relation::ALL.get(code).copied()
    }

    pub fn head_kind(self) -> EntityKind {
        EntityKind::Drug
    }

    pub fn tail_kind(self) -> EntityKind {
        match self {
            Relation::DrugProtein => EntityKind::Protein,
            Relation::DrugIndication => EntityKind::Indication,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::DrugProtein => "drug_protein",
            Relation::DrugIndication => "drug_indication",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drug_protein" => Ok(Relation::DrugProtein),
            "drug_indication" => Ok(Relation::DrugIndication),
            other => Err(Error::Config(format!("unknown relation `{other}`"))),
        }
    }
}

/// One timestamped typed edge. `year == None` is the unknown-year sentinel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: Relation,
    pub tail: EntityId,
    pub year: Option<i32>,
}

/// Identity of a triple ignoring its timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleKey {
    pub head: u32,
    pub relation: u8,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: EntityId, relation: Relation, tail: EntityId, year: Option<i32>) -> Self {
        Triple {
            head,
            relation,
            tail,
            year,
        }
    }

    pub fn key(&self) -> TripleKey {
        TripleKey {
            head: self.head.index,
            relation: self.relation.code() as u8,
            tail: self.tail.index,
        }
    }

    pub fn resolved_year(&self, default_year: i32) -> i32 {
        self.year.unwrap_or(default_year)
    }

    pub fn is_type_valid(&self) -> bool {
        self.head.kind == self.relation.head_kind() && self.tail.kind == self.relation.tail_kind()
    }
}

pub fn check_year(year: Option<i32>) -> Result<()> {
    match year {
        Some(y) if !(MIN_YEAR..=MAX_YEAR).contains(&y) => Err(Error::InvalidYear(y)),
        _ => Ok(()),
    }
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    names: [Vec<String>; 3],
    lookup: HashMap<String, EntityId>,
    edges: Vec<Triple>,
    edge_index: HashMap<TripleKey, usize>,
    // per relation: head index -> tails, tail index -> heads
    out_adj: [Vec<Vec<u32>>; 2],
    in_adj: [Vec<Vec<u32>>; 2],
    frozen: bool,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns an external id under `kind`, returning the existing id when
    /// it is already registered with that kind.
    pub fn intern(&mut self, kind: EntityKind, name: &str) -> Result<EntityId> {
        if name.is_empty() {
            return Err(Error::EmptyId);
        }
        if let Some(&id) = self.lookup.get(name) {
            if id.kind != kind {
                return Err(Error::KindConflict {
                    id: name.to_string(),
                    existing: id.kind,
                    requested: kind,
                });
            }
            return Ok(id);
        }
        if self.frozen {
            return Err(Error::Frozen);
        }
        let names = &mut self.names[kind.code()];
        let id = EntityId::new(kind, names.len() as u32);
        names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn lookup(&self, name: &str) -> Option<EntityId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: EntityId) -> &str {
        &self.names[id.kind.code()][id.index as usize]
    }

    pub fn names(&self, kind: EntityKind) -> &[String] {
        &self.names[kind.code()]
    }

    pub fn count(&self, kind: EntityKind) -> usize {
        self.names[kind.code()].len()
    }

    pub fn num_entities(&self) -> usize {
        self.names.iter().map(Vec::len).sum()
    }

    pub fn entities(&self, kind: EntityKind) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.count(kind) as u32).map(move |i| EntityId::new(kind, i))
    }

    /// Row of `id` in a table laid out drugs, proteins, indications.
    pub fn global_index(&self, id: EntityId) -> usize {
        let offset: usize = EntityKind::ALL[..id.kind.code()]
            .iter()
            .map(|&k| self.count(k))
            .sum();
        offset + id.index as usize
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges_of(&self, relation: Relation) -> impl Iterator<Item = &Triple> + '_ {
        self.edges.iter().filter(move |t| t.relation == relation)
    }

    /// Interns both endpoints and inserts the triple; duplicates collapse to
    /// one edge carrying the earliest known year.
    pub fn add_triple(
        &mut self,
        head: &str,
        relation: Relation,
        tail: &str,
        year: Option<i32>,
    ) -> Result<Triple> {
        check_year(year)?;
        if self.frozen {
            return Err(Error::Frozen);
        }
        if head.is_empty() || tail.is_empty() {
            return Err(Error::EmptyId);
        }
        // check both before interning either so a failed call leaves no trace
        for (name, kind) in [(head, relation.head_kind()), (tail, relation.tail_kind())] {
            if let Some(id) = self.lookup.get(name) {
                if id.kind != kind {
                    return Err(Error::KindConflict {
                        id: name.to_string(),
                        existing: id.kind,
                        requested: kind,
                    });
                }
            }
        }
        let h = self.intern(relation.head_kind(), head)?;
        let t = self.intern(relation.tail_kind(), tail)?;
        self.insert(Triple::new(h, relation, t, year))
    }

    /// Inserts a triple over already-interned entities. Returns the stored
    /// (canonical) triple.
    pub fn insert(&mut self, triple: Triple) -> Result<Triple> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        check_year(triple.year)?;
        if !triple.is_type_valid() {
            return Err(Error::IndexOutOfRange(format!(
                "triple {:?} violates the {} type constraint",
                triple, triple.relation
            )));
        }
        for e in [triple.head, triple.tail] {
            if e.index as usize >= self.count(e.kind) {
                return Err(Error::IndexOutOfRange(format!("{e:?} not registered")));
            }
        }
        let key = triple.key();
        if let Some(&pos) = self.edge_index.get(&key) {
            let stored = &mut self.edges[pos];
            stored.year = match (stored.year, triple.year) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            return Ok(*stored);
        }
        let r = triple.relation.code();
        let (h, t) = (triple.head.index as usize, triple.tail.index as usize);
        grow(&mut self.out_adj[r], h + 1);
        grow(&mut self.in_adj[r], t + 1);
        self.out_adj[r][h].push(triple.tail.index);
        self.in_adj[r][t].push(triple.head.index);
        self.edge_index.insert(key, self.edges.len());
        self.edges.push(triple);
        Ok(triple)
    }

    pub fn is_positive(&self, head: EntityId, relation: Relation, tail: EntityId) -> bool {
        head.kind == relation.head_kind()
            && tail.kind == relation.tail_kind()
            && self.edge_index.contains_key(&TripleKey {
                head: head.index,
                relation: relation.code() as u8,
                tail: tail.index,
            })
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.is_positive(triple.head, triple.relation, triple.tail)
    }

    /// Stored copy of a triple (with its canonical year), if present.
    pub fn get(&self, triple: &Triple) -> Option<&Triple> {
        if !self.contains(triple) {
            return None;
        }
        self.edge_index.get(&triple.key()).map(|&i| &self.edges[i])
    }

    pub fn degree(&self, entity: EntityId, relation: Option<Relation>) -> usize {
        match relation {
            Some(r) => self.neighbors_in(entity, r).len(),
            None => Relation::ALL
                .iter()
                .map(|&r| self.neighbors_in(entity, r).len())
                .sum(),
        }
    }

    /// Indices of entities adjacent to `entity` through `relation`, in
    /// insertion order. Empty when the entity kind does not take part.
    pub fn neighbors_in(&self, entity: EntityId, relation: Relation) -> &[u32] {
        let r = relation.code();
        let adj = if entity.kind == relation.head_kind() {
            &self.out_adj[r]
        } else if entity.kind == relation.tail_kind() {
            &self.in_adj[r]
        } else {
            return &[];
        };
        adj.get(entity.index as usize).map_or(&[], Vec::as_slice)
    }

    /// Marks the graph immutable; subsequent inserts fail with `Frozen`.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// New graph sharing this registry but holding only `edges`.
    pub fn subgraph<'a>(&self, edges: impl IntoIterator<Item = &'a Triple>) -> Result<KnowledgeGraph> {
        let mut g = KnowledgeGraph {
            names: self.names.clone(),
            lookup: self.lookup.clone(),
            ..KnowledgeGraph::default()
        };
        for t in edges {
            g.insert(*t)?;
        }
        Ok(g)
    }

    /// SHA-256 over the ordered entity names and relation codes.
    pub fn registry_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for kind in EntityKind::ALL {
            hasher.update(kind.as_str().as_bytes());
            hasher.update((self.count(kind) as u64).to_le_bytes());
            for n in self.names(kind) {
                hasher.update((n.len() as u64).to_le_bytes());
                hasher.update(n.as_bytes());
            }
        }
        for r in Relation::ALL {
            hasher.update([r.code() as u8]);
            hasher.update(r.as_str().as_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn grow(v: &mut Vec<Vec<u32>>, len: usize) {
    if v.len() < len {
        v.resize_with(len, Vec::new);
    }
}
