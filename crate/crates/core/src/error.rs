use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum HjbError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficient evaluation failed: {0}")]
    Coefficient(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("ellipticity violated at node {node}: {detail}")]
    Ellipticity { node: usize, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("singular linear system (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("eigen-iteration failure: {0}")]
    Eigen(String),

    #[error("supersolution check failed; smallest admissible t is {t_min}")]
    SupersolutionCheck { t_min: f64 },

    #[error("certificate chain verification failed at node {node} (violation {violation:e})")]
    Certificate { node: usize, violation: f64 },

    #[error("t* bracket calibration failure: {0}")]
    Bracket(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("assertion failed [{invariant}]: {detail}")]
    Assertion { invariant: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HjbError>;

impl HjbError {
    pub fn assertion(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        HjbError::Assertion {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }
}
