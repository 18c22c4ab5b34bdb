use thiserror::Error;

/// Errors produced by the fragwave library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The dislocation measure (or one of its atoms) is malformed.
    #[error("invalid dislocation measure: {0}")]
    InvalidMeasure(String),

    /// A numeric parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("critical exponent not bracketed: {0}")]
    NotBracketed(String),

    #[error("subcritical speed: c = {c} does not exceed the critical speed {critical}")]
    SubcriticalSpeed { c: f64, critical: f64 },

    #[error("bisection failed: {0}")]
    BisectionFailed(String),

    #[error("residual {max_abs} exceeds tolerance {tol}")]
    ResidualExceeded { max_abs: f64, tol: f64 },

    #[error("population extinct")]
    PopulationExtinct,

    #[error("x = {x} lies outside the scale table [0, {x_max}]")]
    OutsideTable { x: f64, x_max: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of a numerical procedure (bracketing, bisection,
    /// residual control) as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotBracketed(_) | Error::BisectionFailed(_) | Error::ResidualExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
