//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mass matrix is numerically singular at q = ({q0}, {q1})")]
    SingularMassMatrix { q0: f64, q1: f64 },

    #[error("adaptive step size underflow at t = {t} (needed {step}, minimum {min_step})")]
    StepSizeUnderflow { t: f64, step: f64, min_step: f64 },

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("gradient became non-finite")]
    NonFiniteGradient,

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
