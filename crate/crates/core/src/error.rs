use thiserror::Error;

/// Errors raised by the solvers and model constructors.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinError {
    /// A parameter or argument lies outside the domain of the formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter failed construction-time validation.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// DSMC time step violates the convexity bound dt <= eps / Sigma.
    #[error("time step {dt} exceeds the convexity bound eps/Sigma = {bound}")]
    StepSize { dt: f64, bound: f64 },

    /// The implicit tridiagonal system could not be solved.
    #[error("tridiagonal solve failed at row {row} (step {step}): {reason}")]
    LinearSolve {
        step: usize,
        row: usize,
        reason: String,
    },

    /// A quadrature-based construction lost too much mass outside the grid.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Neither the power-law nor the slim-tail criterion was met.
    #[error("tail classification inconclusive: {0}")]
    Inconclusive(String),

    /// A conserved quantity drifted past its tolerance.
    #[error("invariant violated at t = {t}: {what}")]
    Invariant { t: f64, what: String },

    /// A right-hand side hit a state where it is not defined.
    #[error("singular state: {0}")]
    Singular(String),

    /// Two inputs do not share the same grid or time axis.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
}

pub type Result<T> = std::result::Result<T, KinError>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> KinError {
    KinError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
