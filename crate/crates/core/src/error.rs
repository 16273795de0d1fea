use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OsrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OsrError {
    /// Invalid architecture, hyperparameter or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A forward or backward pass produced NaN or infinity.
    #[error("numeric error in layer {layer} ({kind}): non-finite value")]
    NonFinite { layer: usize, kind: &'static str },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A mini-batch is missing at least one known class.
    #[error("stratification error: class {class} absent from batch")]
    Stratification { class: usize },

    #[error("degenerate Weibull tail: {0}")]
    DegenerateTail(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Cache or gradient structure does not match the model it is used with.
    #[error("internal error: {0}")]
    Internal(String),
}

impl OsrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OsrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            OsrError::Io { .. } | OsrError::Format { .. } | OsrError::Truncated { .. } => 2,
            _ => 1,
        }
    }
}
