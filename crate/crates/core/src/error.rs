use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid simplex vector: {0}")]
    InvalidSimplex(String),

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: &'static str },

    #[error(
        "{what} did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("enumeration of {count} products exceeds budget {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("degenerate law: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("law file parse error: {0}")]
    Parse(String),
}
