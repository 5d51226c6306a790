use std::path::PathBuf;

use thiserror::Error;

/// Broad failure classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration or an invalid request.
    Usage,
    /// Missing, malformed or inconsistent input data.
    Data,
    /// A numeric failure: divergence, non-finite values, failed gradient check.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("input too short for {op}: length {length} < {required}")]
    InputTooShort {
        op: &'static str,
        length: usize,
        required: usize,
    },

    #[error("label {label} out of range for {num_classes} classes (row {row})")]
    Label {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("non-finite gradient for parameter `{name}` at flat index {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("graph is not deterministic under a fixed seed: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("alignment error: {what} has {left} rows but {other} has {right}")]
    Alignment {
        what: String,
        left: usize,
        other: String,
        right: usize,
    },

    #[error("non-finite value in {path} at row {row}, column {col}")]
    NonFiniteData { path: PathBuf, row: usize, col: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("class `{class}` has {count} samples, fewer than k = {k}")]
    Stratification { class: String, count: usize, k: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension { .. } | Error::Config(_) | Error::InputTooShort { .. } => {
                ErrorClass::Usage
            }
            Error::NonFiniteGradient { .. }
            | Error::Diverged { .. }
            | Error::NonDeterministic { .. } => ErrorClass::Numeric,
            Error::Fold { source, .. } => source.class(),
            Error::Label { .. }
            | Error::Format { .. }
            | Error::Alignment { .. }
            | Error::NonFiniteData { .. }
            | Error::Data(_)
            | Error::Stratification { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
