use thiserror::Error;

/// Errors raised by the pathwise integration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {time} is not a point of the grid")]
    NotOnGrid { time: f64 },

    #[error("inputs live on different time grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NumericDomain(String),

    #[error("singular derivative fit at grid index {index}: no variation of the reference path in the window")]
    SingularFit { index: usize },

    #[error("derivative matrix is not invertible at t = {time}")]
    NonInvertible { time: f64 },

    #[error("Hölder exponent undefined: path has a vanishing increment scale")]
    UndefinedExponent,

    #[error(
        "coherence premise failed on (s, u, t) = ({s}, {u}, {t}): defect is {ratio} times the allowed bound"
    )]
    PremiseFailed { s: f64, u: f64, t: f64, ratio: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
