use std::path::PathBuf;

use thiserror::Error;

use crate::graph::{EntityKind, Relation};
use crate::negatives::Tier;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("entity `{id}` is registered as {existing:?}, cannot reuse it as {requested:?}")]
    KindConflict {
        id: String,
        existing: EntityKind,
        requested: EntityKind,
    },

    #[error("year {0} outside [1900, 2100]")]
    InvalidYear(i32),

    #[error("empty external id")]
    EmptyId,

    #[error("graph is frozen")]
    Frozen,

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: expected {expected} values, found {found}")]
    DimMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("negative pool has no {tier:?} entries for {relation:?}{}", source_hint(.source_path))]
    PoolExhausted {
        relation: Relation,
        tier: Tier,
        source_path: Option<PathBuf>,
    },

    #[error("{attempts} consecutive candidate draws collided with known positives")]
    RejectionOverflow { attempts: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("missing feature vector for {0}")]
    MissingFeature(String),

    #[error("degenerate score set: {0}")]
    DegenerateSet(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn source_hint(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" (negatives file: {})", p.display()),
        None => " (no negatives file configured)".to_string(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
