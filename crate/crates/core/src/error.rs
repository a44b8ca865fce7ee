use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Cholesky of the given pivot block failed.
    #[error("matrix is not positive definite (pivot block {0})")]
    NotPositiveDefinite(usize),

    #[error("process noise block {0} is numerically singular")]
    SingularProcessNoise(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("hyperparameter `{name}` must be positive and finite, got {value}")]
    NonPositiveHyperparameter { name: String, value: f64 },

    #[error("unknown hyperparameter index {0}")]
    UnknownHyperparameter(usize),

    #[error("EQ approximation order {0} is invalid (must be even and in 2..=16)")]
    InvalidApproxOrder(usize),

    #[error("polynomial root finding failed for EQ approximation order {0}")]
    RootFinding(usize),

    #[error("duplicate training timestamp at index {0}")]
    DuplicateTimestamp(usize),

    #[error("timestamps must be strictly increasing (violated at index {0})")]
    NonIncreasingTimes(usize),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("dataset must contain at least one observation")]
    EmptyDataset,

    #[error("noise variance must be positive and finite, got {0}")]
    InvalidNoise(f64),

    #[error("predictive variance {value} at test index {index} is below the clamping tolerance")]
    NegativeVariance { index: usize, value: f64 },

    #[error("dense oracle limited to {cap} points, got {n}")]
    TooLarge { n: usize, cap: usize },

    #[error("innovation variance is not positive at step {0}")]
    InnovationVariance(usize),

    #[error("starting point is infeasible: {0}")]
    InfeasibleStart(Box<Error>),

    #[error("malformed matrix dump: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
