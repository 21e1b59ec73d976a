use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter trees that must share a topology do not.
    #[error("structural mismatch at `{path}`: {detail}")]
    Structural { path: String, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// A tensor shape is incompatible with the requested sparsity structure.
    #[error("structure error at `{path}` with dims {dims:?}: {detail}")]
    Structure {
        path: String,
        dims: Vec<usize>,
        detail: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} at step {step}")]
    NonFinite { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural { .. } => "structural",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Structure { .. } => "structure",
            Error::Data(_) => "data",
            Error::Shape(_) => "shape",
            Error::Unsupported(_) => "unsupported",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFinite { .. } => "non_finite",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn structure(path: &str, dims: &[usize], detail: impl Into<String>) -> Self {
        Error::Structure {
            path: path.to_string(),
            dims: dims.to_vec(),
            detail: detail.into(),
        }
    }
}
