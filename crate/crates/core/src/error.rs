use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor could not be constructed (zero extent or element-count overflow).
    #[error("invalid tensor construction: {0}")]
    Construction(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid layer parameters: {0}")]
    Param(String),

    /// A model spec that cannot be assembled; `stage` is the zero-based stage index when known.
    #[error("{}", fmt_spec(*.stage, .msg))]
    Spec { stage: Option<usize>, msg: String },

    #[error("state error: {0}")]
    State(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: bad magic number {found:#010x} at byte 0, expected {expected}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: String,
    },

    #[error("{path}: truncated at byte {actual}, expected {expected} bytes")]
    Truncated { path: PathBuf, expected: u64, actual: u64 },

    #[error("{path}: label {label} at byte {offset} is not below class count {classes}")]
    LabelRange {
        path: PathBuf,
        label: u64,
        classes: usize,
        offset: u64,
    },

    #[error("incompatible: {0}")]
    Compat(String),

    #[error("non-finite loss at step {step}: {loss}")]
    NonFinite { step: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_spec(stage: Option<usize>, msg: &str) -> String {
    match stage {
        Some(i) => format!("spec error at stage {i}: {msg}"),
        None => format!("spec error: {msg}"),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn spec(stage: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Spec { stage, msg: msg.into() }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
