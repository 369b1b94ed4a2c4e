use thiserror::Error;

/// Errors raised by the deflator toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear system has no solution; `residual` is the norm of the
    /// component of the right-hand side outside the range.
    #[error("infeasible system (residual {residual:e})")]
    Infeasible { residual: f64 },

    /// Jump risk premia too close to (or above) one at the listed marks.
    #[error("jump risk premium exceeds 1 - margin at marks {marks:?}")]
    MarginViolated { marks: Vec<usize> },

    /// An argument outside the domain of a map (e.g. a jump at or below -1).
    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
