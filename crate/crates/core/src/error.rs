use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid algebra context: {0}")]
    InvalidContext(String),
    #[error("matrix is not Hermitian: deviation {deviation:e} exceeds tolerance {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },
    #[error("{0} failed to converge")]
    ConvergenceFailure(&'static str),
    #[error("dimension {dim} exceeds the configured cap {cap}")]
    DimensionOverflow { dim: usize, cap: usize },
    #[error("trace weights differ: {left} vs {right}")]
    WeightMismatch { left: f64, right: f64 },
    #[error("operands live in different algebra contexts: {0}")]
    ContextMismatch(String),
    #[error("distribution level must be nonnegative, got {0}")]
    NegativeLevel(f64),
    #[error("operand is not a projection: |q^2 - q| = {deviation:e}")]
    NotProjection { deviation: f64 },
    #[error("invalid exponent {0}; expected p >= 1 or p = inf")]
    InvalidExponent(f64),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("unbounded: {0}")]
    Unbounded(String),
    #[error("not an Orlicz function: {0}")]
    NotOrlicz(String),
    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("family carries no certified L-infinity Khintchine constant")]
    MissingCertificate,
    #[error("family is not orthogonal: off-diagonal Gram mass {0:e}")]
    NotOrthogonal(f64),
    #[error("Gram matrix is singular")]
    SingularGram,
    #[error("family has no vacuum state")]
    MissingState,
    #[error("partitions do not form a refining filtration: {0}")]
    NotRefining(String),
    #[error("sequence is not a martingale difference sequence: deviation {0:e}")]
    NotMartingale(f64),
    #[error("invalid descriptor {0:?}")]
    InvalidDescriptor(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
