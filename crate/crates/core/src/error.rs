use thiserror::Error;

/// Failures surfaced by the numerical operators.
///
/// Precondition violations carry the offending value so that callers (the
/// CLI in particular) can report them verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: String,
    },

    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data is not mean-zero: measured mean {mean:e} exceeds allowed {allowed:e}")]
    NotMeanZero { mean: f64, allowed: f64 },

    #[error("field is not solenoidal: relative divergence {defect:e} exceeds {allowed:e}")]
    NotSolenoidal { defect: f64, allowed: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("history tail does not converge: kappa_min * T = {product:e} is below 1e-6")]
    NonConvergentTail { product: f64 },

    #[error("outside contraction regime: residual grew by factor {growth:.4} for 3 consecutive iterations")]
    OutsideContraction { growth: f64, residuals: Vec<f64> },

    #[error("Picard iteration did not reach tol {tol:e} within {max_iter} iterations (last residual {residual:e})")]
    NotConverged { tol: f64, max_iter: usize, residual: f64 },

    #[error("malformed field binary: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NonFinite { .. } => "non_finite",
            Error::Shape(_) => "shape",
            Error::NotMeanZero { .. } => "not_mean_zero",
            Error::NotSolenoidal { .. } => "not_solenoidal",
            Error::Degenerate(_) => "degenerate",
            Error::NonConvergentTail { .. } => "non_convergent_tail",
            Error::OutsideContraction { .. } => "outside_contraction",
            Error::NotConverged { .. } => "not_converged",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
