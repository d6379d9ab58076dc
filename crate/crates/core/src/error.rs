use thiserror::Error;

use crate::expr::DomainError;
use crate::linalg::LinalgError;

/// Failure to evaluate a field, map or closed loop at a point.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("expected a vector of length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no control reproduces the target at this state (residual {residual:e})")]
    NoControl { residual: f64 },
    #[error("non-finite value produced")]
    NonFinite,
}
