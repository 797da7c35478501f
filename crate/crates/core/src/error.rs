use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate critical point: smallest |eigenvalue| {gap:e} is below {threshold:e}")]
    DegenerateCritical { gap: f64, threshold: f64 },

    #[error("non-finite values produced during {0}")]
    NonFinite(&'static str),

    #[error("flow limit matches no known critical point (nearest at distance {distance:e})")]
    NoTargetMatch { distance: f64 },

    #[error("flow time exceeded s = {s_max}")]
    MaxFlowTime { s_max: f64 },

    #[error("boundary operator does not square to zero in degree {degree}")]
    BoundaryNotSquareZero { degree: usize },

    #[error("integer entry exceeds {bits} bits during Smith normal form")]
    Overflow { bits: u64 },

    #[error("endpoint actions coincide; no nonconstant cylinder to anchor")]
    AnchorInfeasible,

    #[error("slope {slope} is touched without crossing at r = {radius}")]
    TangencySlope { radius: f64, slope: f64 },

    #[error("vertex gap {gap} at {index} exceeds the limit {limit}")]
    GapViolated { index: usize, gap: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
