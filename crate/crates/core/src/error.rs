use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown transition label `{0}`")]
    UnknownLabel(String),

    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("integration step {step_us} us too large: population left [0, 1] by {excursion:.3e}; use a smaller step")]
    StepTooLarge { step_us: f64, excursion: f64 },

    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("fit residual too large: worst statistic `{statistic}` off by {relative_error:.3} relative")]
    FitResidual {
        statistic: String,
        relative_error: f64,
    },

    #[error("empty selection: {context}")]
    EmptySelection { context: String },

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
