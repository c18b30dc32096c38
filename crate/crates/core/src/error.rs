use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("empty index set for {0}")]
    EmptyIndexSet(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("orthogonal initialization needs out_dim >= in_dim, got {out_dim}x{in_dim}")]
    OrthogonalShape { out_dim: usize, in_dim: usize },

    #[error("rewiring baseline already recorded")]
    BaselineAlreadyRecorded,

    #[error("rewiring baseline missing; record_baseline must run first")]
    BaselineMissing,

    #[error("skip connection into layer {layer} is not allowed: {reason}")]
    SkipNotAllowed { layer: usize, reason: &'static str },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checksum mismatch for {file}: manifest {expected}, computed {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },

    #[error("bundle does not match manifest: {0}")]
    ManifestMismatch(String),

    #[error("invalid json in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
