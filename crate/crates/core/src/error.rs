use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ply format error: {0}")]
    Format(String),

    #[error("ply data error in record {record}: {message}")]
    Data { record: usize, message: String },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("traversal stack overflow (depth limit {limit})")]
    StackOverflow { limit: usize },

    #[error("hit list capacity {capacity} exceeded")]
    HitCapacity { capacity: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint refers to a node missing from the structure: {0:#x}")]
    StructureMismatch(u64),

    #[error("image error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
