use thiserror::Error;

/// Errors raised anywhere in the filtering and learning pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error in `{op}` at value {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("non-finite result from `{op}`")]
    NonFinite { op: &'static str },

    #[error("all particle weight concentrated on a single particle")]
    DegenerateWeights,

    #[error("numerical failure at time step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("variable belongs to a different tape")]
    ForeignTape,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
