use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no binding for free leaf node {0}")]
    MissingBinding(usize),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    /// A rollout left the finite region (or the divergence guard) at `step`.
    #[error("integration diverged at step {step}")]
    Divergence { step: usize, state: Vec<f64> },

    /// The projection denominator fell below the safety floor while a correction was required.
    #[error("degenerate Lyapunov gradient: squared norm {norm_sq:e} below floor")]
    DegenerateGradient { norm_sq: f64 },

    #[error("singular matrix in linear solve")]
    Singular,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint schema: {0}")]
    Schema(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
