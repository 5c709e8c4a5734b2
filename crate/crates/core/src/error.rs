use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QncError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too many edges: {requested} requested, at most {max} distinct directed edges fit on {n} nodes")]
    TooManyEdges { n: usize, requested: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("grid too coarse: spacing {spacing} exceeds spike width {spike_sd}")]
    GridTooCoarse { spacing: f64, spike_sd: f64 },

    #[error("node {0} cannot reach the gateway")]
    Unreachable(usize),

    #[error("non-finite belief at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("exact MMSE enumeration supports at most {max} variables, got {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, QncError>;

impl QncError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QncError::Io { path: path.into(), source }
    }
}
