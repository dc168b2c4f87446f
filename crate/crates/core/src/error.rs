use thiserror::Error;

/// Errors raised by the solvers and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The slab grid is too coarse for the requested Knudsen number.
    #[error("resolution guard violated: dx = {dx} exceeds kn/4 = {limit}; use nx >= {min_nx}")]
    Resolution { dx: f64, limit: f64, min_nx: usize },

    #[error("numerical breakdown at step {step}: {reason}")]
    NumericalBreakdown { step: usize, reason: String },

    #[error("internal consistency failure: {0}")]
    InternalConsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
