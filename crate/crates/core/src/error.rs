use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree. `axis` names the offending dimension.
    #[error("shape mismatch on {axis} axis: {detail}")]
    Shape { axis: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("class count mismatch: model has {model}, data has {data}")]
    ClassMismatch { model: usize, data: usize },
}

impl Error {
    pub(crate) fn shape(axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            axis,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable tag for machine consumption (CLI exit lines).
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::NonFinite(_) => "diverged",
            Error::ClassMismatch { .. } => "class-mismatch",
        }
    }
}
