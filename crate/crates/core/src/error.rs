use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {col}: cannot parse {token:?} as a number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        col: usize,
        token: String,
    },
    #[error("{path}: line {line}: {msg}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown label column {0:?}")]
    UnknownLabelColumn(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class {class:?} has {count} members, need at least {needed}")]
    DegenerateClass {
        class: String,
        count: usize,
        needed: usize,
    },
    #[error("unknown source label {0:?}")]
    UnknownSourceLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("augmentation cannot produce a unique row after {retries} retries (row dropped)")]
    UniquenessUnattainable { retries: usize },
    #[error("empty mask")]
    EmptyMask,
    #[error("solver did not converge within {max_iters} iterations (residual {residual})")]
    NoConvergence { max_iters: usize, residual: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
