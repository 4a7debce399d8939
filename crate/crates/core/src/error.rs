use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("preconditioner is singular")]
    SingularPreconditioner,

    #[error("dense operation on dimension {n} exceeds cap {cap}")]
    UnsupportedSize { n: usize, cap: usize },

    #[error("step system is degenerate (direction matrix is numerically zero)")]
    DegenerateSystem,

    #[error("norm weight is not positive on the spectrum (value {value:e} at {at:e})")]
    NormNotPositive { at: f64, value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
