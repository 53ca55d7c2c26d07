use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: divisor magnitude below 1e-12")]
    DivisionByZero { op: &'static str },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("axis {axis} is invalid for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("{op}: needs at least {need} rows, got {got}")]
    TooFewRows {
        op: &'static str,
        need: usize,
        got: usize,
    },

    #[error("expected a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("{op}: index {index} out of range for {len} elements")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("label row {row} is not one-hot")]
    InvalidLabels { row: usize },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged in stage {stage}, epoch {epoch}, net {net}")]
    Divergence { stage: u8, epoch: usize, net: usize },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
