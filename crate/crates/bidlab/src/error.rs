//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes; carries both offending dims.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range (bound {bound})")]
    Bounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// A tensor handle that does not point into the active tape.
    #[error("tensor is not on the active tape")]
    MissingNode,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss is not deterministic: {0}")]
    Determinism(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("episode over: step {t} >= {limit}")]
    EpisodeOver { t: usize, limit: usize },

    #[error("duplicate trajectory: {0}")]
    Duplicate(String),

    /// Persistence failure pinned to a 1-based line of the offending file.
    #[error("{path}:{line}: {msg}")]
    Load {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("evaluation seeds overlap training seeds: {0}")]
    Contamination(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
