use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lattice mismatch: expected dimension {expected}, got {found}")]
    LatticeMismatch { expected: usize, found: usize },

    #[error("degenerate perturbation: {0}")]
    DegeneratePerturbation(String),

    #[error("insufficient data: {usable} usable points (need 3); leakage profile {leakage:?}")]
    InsufficientData { usable: usize, leakage: Vec<f64> },

    #[error("cat-kick orientation: {0}")]
    Orientation(String),

    #[error("operator too large for dense eigensolver: dimension {dim} exceeds cap {cap}; use a smaller cutoff")]
    TooLarge { dim: usize, cap: usize },

    #[error("spectral decomposition unusable: defect {defect:e} exceeds tolerance {tolerance:e}")]
    SpectralDefect { defect: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
