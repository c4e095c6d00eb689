use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} needs L <= {cap}, got L = {length}")]
    ResourceLimit {
        what: &'static str,
        length: usize,
        cap: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(
        "shifted operator is nearly singular (condition estimate {condition:.3e} > {limit:.0e}); \
         the target energy sits on an eigenvalue, perturb delta slightly"
    )]
    NearDegenerate { condition: f64, limit: f64 },

    #[error("iterative solver stalled: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("local update failed at site {site}: {reason}")]
    SiteFailure { site: usize, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
