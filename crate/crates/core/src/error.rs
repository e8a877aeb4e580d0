use alloc::string::String;
use core::fmt;

/// Errors reported by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// An input was NaN or infinite where a finite value is required.
    NonFinite { what: String },
    /// A probability argument fell outside the closed unit interval.
    ProbOutOfRange { value: f64 },
    /// A raw correlation fell outside `[-1, 1]`.
    CorrOutOfRange { value: f64 },
    /// Matrix or vector dimensions do not agree.
    DimensionMismatch { what: String },
    /// A matrix required to be positive semidefinite is not; carries the
    /// most negative eigenvalue found.
    NotPositiveSemidefinite { what: String, min_eigenvalue: f64 },
    /// A simulated trajectory is too short for the requested statistic.
    PathTooShort { steps: usize, min_steps: usize },
    /// The assembled system is degenerate (for example all correlations are
    /// zero, so every coefficient vanishes).
    Degenerate { what: String },
    /// Division by a zero portfolio weight in implied-variance mode.
    ZeroWeight { index: usize },
    /// Generic contract violation with a description.
    Contract { what: String },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::NonFinite { what } => write!(f, "non-finite value: {what}"),
            CoreError::ProbOutOfRange { value } => {
                write!(f, "probability {value} outside [0, 1]")
            }
            CoreError::CorrOutOfRange { value } => {
                write!(f, "correlation {value} outside [-1, 1]")
            }
            CoreError::DimensionMismatch { what } => write!(f, "dimension mismatch: {what}"),
            CoreError::NotPositiveSemidefinite {
                what,
                min_eigenvalue,
            } => write!(
                f,
                "{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            CoreError::PathTooShort { steps, min_steps } => {
                write!(f, "path has {steps} steps, need at least {min_steps}")
            }
            CoreError::Degenerate { what } => write!(f, "degenerate system: {what}"),
            CoreError::ZeroWeight { index } => {
                write!(f, "weight {index} is zero; implied variance undefined")
            }
            CoreError::Contract { what } => write!(f, "contract violation: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}

/// Shorthand used throughout the crate.
pub(crate) type Result<T> = core::result::Result<T, CoreError>;
