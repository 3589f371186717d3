use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Validation findings on graphs are data
/// (see [`crate::fcg::ValidationReport`]) and only become an `Error` when an
/// operation requires a valid input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("invalid graph {graph_id}: {violations}")]
    InvalidGraph {
        graph_id: String,
        violations: String,
    },

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("unsupported format version: {0}")]
    VersionMismatch(String),

    #[error("vocabulary hash mismatch: model expects {expected}, vocabulary has {actual}")]
    VocabularyMismatch { expected: String, actual: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown node id {0}")]
    UnknownNode(String),

    #[error("empty benign pool with positive overhead")]
    EmptyPool,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            line,
            msg: msg.into(),
        }
    }
}
