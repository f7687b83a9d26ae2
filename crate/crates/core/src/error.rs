use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A distribution or model parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The cumulant-matching system has no admissible solution for the requested family.
    #[error("infeasible {family} parameters: {reason}")]
    Infeasible {
        family: String,
        reason: String,
        diagnostics: Vec<(String, f64)>,
    },

    /// Truncated mass is too large for the requested accuracy.
    #[error("tail mass {tail_mass:e} exceeds {limit:e}; moment error may reach {moment_error_bound:e}")]
    Accuracy {
        tail_mass: f64,
        limit: f64,
        moment_error_bound: f64,
    },

    /// Exact enumeration would exceed the configured budget.
    #[error("enumeration needs {needed} configurations, budget is {budget}; use Monte Carlo sampling instead")]
    Budget { needed: u128, budget: u64 },

    #[error("numerical failure: {message} (residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("index {index} out of range (valid up to {limit})")]
    OutOfRange { index: i64, limit: i64 },

    #[error("invalid input: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn infeasible(
        family: impl std::fmt::Display,
        reason: impl Into<String>,
        diagnostics: Vec<(&str, f64)>,
    ) -> Self {
        Error::Infeasible {
            family: family.to_string(),
            reason: reason.into(),
            diagnostics: diagnostics
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible { .. })
    }
}
