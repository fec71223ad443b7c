use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("attention query {query} has every key suppressed")]
    AllSuppressed { query: usize },

    #[error("backward requested before any forward pass was recorded")]
    EmptyTape,

    #[error("loss must be a single scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("camera parameter {name}={value} outside [{lo}, {hi}]")]
    CameraRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate crop window at frame {frame}: {detail}")]
    DegenerateWindow { frame: usize, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("scene file rejected:\n{}", .0.join("\n"))]
    Scene(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }
}
