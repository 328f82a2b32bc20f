use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the unlearning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty retained set")]
    EmptyRetainedSet,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate kernel input: {0}")]
    DegenerateKernel(String),

    #[error("non-differentiable prediction kernel")]
    NonDifferentiableKernel,

    #[error("training diverged at epoch {epoch}; last finite loss {last_finite_loss}")]
    Diverged { epoch: usize, last_finite_loss: f64 },

    #[error("Hessian is singular or indefinite at damping {damping}; increase the damping")]
    Indefinite { damping: f64 },

    #[error("inverse-HVP recursion diverged at iteration {iteration}: β too large")]
    LissaDiverged { iteration: usize },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("non-finite parameters after {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
