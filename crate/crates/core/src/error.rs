use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Load {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: {message}")]
    Format { file: String, message: String },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("graphon estimation failed: {0}")]
    Estimation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid graphon: {0}")]
    Validity(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver did not converge at lambda={lambda} after {iterations} iterations (residual {residual:.3e})")]
    Solver {
        lambda: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("{path} is locked by another run")]
    Locked { path: PathBuf },

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Load { .. } => "E_LOAD",
            Error::Format { .. } => "E_FORMAT",
            Error::Write { .. } => "E_WRITE",
            Error::Estimation(_) => "E_ESTIMATION",
            Error::Shape(_) => "E_SHAPE",
            Error::Validity(_) => "E_VALIDITY",
            Error::Config(_) => "E_CONFIG",
            Error::Solver { .. } => "E_SOLVER",
            Error::Locked { .. } => "E_LOCKED",
            Error::Partition(_) => "E_PARTITION",
            Error::Json(_) => "E_JSON",
        }
    }

    pub(crate) fn format(file: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            file: file.into(),
            message: message.into(),
        }
    }
}
