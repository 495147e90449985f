use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient for parameter `{name}` at index {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("gradient check failed: `{name}`[{index}] analytic={analytic:e} numeric={numeric:e} rel_err={rel_err:e}")]
    GradCheck {
        name: String,
        index: usize,
        analytic: f64,
        numeric: f64,
        rel_err: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    #[error("token provider called {calls} times in one episode (expected exactly once)")]
    TokenContract { calls: u32 },

    #[error("step called after episode finished")]
    EpisodeDone,

    #[error("unknown {what} `{name}`")]
    UnknownName { what: &'static str, name: String },

    #[error("at training step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
