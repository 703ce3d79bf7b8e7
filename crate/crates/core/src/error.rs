use thiserror::Error;

use crate::quad::IntegralResult;

/// Errors raised by the rate library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The bath or noise model is outside its supported family.
    #[error("model error: {0}")]
    Model(String),

    /// A parameter failed validation before any numerics ran.
    #[error("invalid parameter: {0}")]
    Validation(String),

    /// An integrand produced NaN or infinity.
    #[error("non-finite integrand at t = {t}")]
    NonFinite { t: f64 },

    /// A numerical procedure stopped without meeting its tolerance.
    #[error("{what} did not converge: partial value {}, error estimate {}, stopped at {} ({:?})",
        .result.value, .result.error_estimate, .result.t_truncation, .result.status)]
    NotConverged { what: String, result: IntegralResult },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
