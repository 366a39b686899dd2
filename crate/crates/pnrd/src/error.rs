//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the detector-statistics and calibration routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input value failed a structural check (normalization, ordering).
    #[error("validation error: {0}")]
    Validation(String),

    /// An iterative numerical routine failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Too few usable data points for the requested estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The photocount record never reached the saturation plateau.
    #[error("saturation not reached: {0}")]
    SaturationNotReached(String),

    /// The fitted model is statistically incompatible with the data.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    /// The data shows no photon-number correlation where one is required.
    #[error("non-quantum data: {0}")]
    NonQuantumData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
