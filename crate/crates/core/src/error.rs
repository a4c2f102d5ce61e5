use thiserror::Error;

/// Errors surfaced by construction, integration and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Blow-up is diagnostic information; the offending step index is kept.
    #[error("non-finite state at step {step} (t = {time})")]
    NonFinite { step: usize, time: f64 },

    #[error("diffusion matrix is singular; a change of measure requires an invertible sigma")]
    SingularSigma,

    #[error("unknown model '{0}'")]
    UnknownModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
