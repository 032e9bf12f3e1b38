//! Link-prediction benchmark engine for drug–protein–indication knowledge
//! graphs: temporal splits with cold-start relocation, tiered verified
//! negatives, shallow KGE models, a topological message-passing model,
//! ranking metrics and a data/parameter scaling harness.

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod kge;
pub mod metrics;
pub mod negatives;
pub mod optim;
pub mod split;
pub mod topo;

pub use error::{Error, Result};
pub use graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
