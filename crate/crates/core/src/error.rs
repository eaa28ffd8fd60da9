use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("quadrature order {order} too low for {modes} modes (need at least {})", modes + 1)]
    QuadratureOrderTooLow { modes: usize, order: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("operation requires the {expected} co-albedo variant")]
    WrongVariant { expected: &'static str },
    #[error("Yosida parameter must be positive, got {0}")]
    NonpositiveLambda(f64),
    #[error("emission law must be strictly increasing (slope {0})")]
    NonMonotoneLaw(f64),
    #[error("noise uses {requested} modes but the basis only holds {available}")]
    ModeOverflow { requested: usize, available: usize },
    #[error("exact stochastic convolution requires a time-constant noise operator")]
    RequiresConstantG,
    #[error("sample path grid (dt={path_dt}, steps={path_steps}) does not match solver grid (dt={dt}, steps={steps})")]
    GridMismatch {
        path_dt: f64,
        path_steps: usize,
        dt: f64,
        steps: usize,
    },
    #[error("comparison runs must use the same co-albedo graph and a Lipschitz (Sellers) variant")]
    VariantMismatch,
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
