use thiserror::Error;

/// Errors raised by the estimation library and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid robot index {index} for a team of {n_robots}")]
    BadRobot { index: usize, n_robots: usize },

    #[error("observer and target must differ (both {0})")]
    SelfDetection(usize),

    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    Indefinite { min_eigenvalue: f64 },

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("all hypothesis weights are zero or non-finite")]
    DegenerateWeights,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("replay mismatch: {0}")]
    ReplayMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
