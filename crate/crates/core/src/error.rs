use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
///
/// The variants line up with the CLI exit-code contract: configuration
/// problems, I/O failures, and numeric aborts map to distinct codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
