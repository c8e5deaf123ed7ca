use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented invariant. `field` names the offending key.
    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("correlation matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("factorization was built for a different problem")]
    StaleFactorization,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("solver diverged at iteration {iteration} (beta = {beta})")]
    Diverged { iteration: usize, beta: f64 },

    #[error("QoS target is infeasible: transmit power exceeded cap {cap:e} at iteration {iteration}")]
    QosInfeasible { iteration: usize, cap: f64 },

    #[error("ergodic diagnostics need iterate snapshots; enable `record_snapshots`")]
    MissingSnapshots,

    #[error("{what} requires a single-user scenario, got K = {k}")]
    NotSingleUser { what: &'static str, k: usize },

    #[error("problem too large for dense materialization ({rows}x{cols})")]
    TooLargeForDense { rows: usize, cols: usize },

    #[error("malformed scenario file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
