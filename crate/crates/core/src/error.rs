use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagflowError {
    #[error("point {point:?} lies outside the chart domain")]
    Domain { point: Vec<f64> },

    #[error("metric is numerically singular (condition number {condition:.3e})")]
    SingularMetric { condition: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    Stiffness { t: f64, h: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MagflowError {
    fn from(e: std::io::Error) -> Self {
        MagflowError::Io(e.to_string())
    }
}

pub type Result<T, E = MagflowError> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> MagflowError {
    MagflowError::Contract(msg.into())
}

impl MagflowError {
    /// Errors caused by the caller's input rather than by the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            MagflowError::Contract(_) | MagflowError::Parse { .. } | MagflowError::Unsupported(_) | MagflowError::Io(_)
        )
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            MagflowError::Domain { .. } => "domain",
            MagflowError::SingularMetric { .. } => "singular_metric",
            MagflowError::Contract(_) => "contract",
            MagflowError::Stiffness { .. } => "stiffness",
            MagflowError::Unsupported(_) => "unsupported",
            MagflowError::Refused(_) => "refused",
            MagflowError::NonConvergence(_) => "non_convergence",
            MagflowError::Parse { .. } => "parse",
            MagflowError::Io(_) => "io",
        }
    }
}
