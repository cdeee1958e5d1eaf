use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor dimensions {0:?} overflow the addressable length")]
    DimOverflow([usize; 4]),

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("region {0} lies outside the tensor")]
    OutOfBounds(String),

    #[error(
        "level {level}: {axis} extent {extent} is not divisible by grid size {grid} \
         under the strict remainder policy"
    )]
    Divisibility {
        level: usize,
        axis: &'static str,
        extent: usize,
        grid: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("permutation record does not match: {0}")]
    RecordMismatch(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at iteration {iter}: loss is {loss}")]
    Divergence { iter: usize, loss: f64 },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::Json(_) => ErrorClass::Data,
            Error::NonFinite { .. } | Error::Divergence { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Usage,
        }
    }
}
