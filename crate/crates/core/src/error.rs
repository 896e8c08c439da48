use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (last jitter attempted: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("{method} did not converge after {iterations} iterations (last squared change {last_change:e})")]
    Convergence {
        method: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingest { row: usize, column: String, message: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("data generation failed: {0}")]
    Generation(String),

    #[error("chain {chain} aborted at iteration {iteration}: {message}")]
    ChainAborted { chain: usize, iteration: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Domain(_) => "domain",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Convergence { .. } => "convergence",
            Error::Undefined(_) => "undefined",
            Error::Ingest { .. } => "ingest",
            Error::Config(_) => "config",
            Error::Generation(_) => "generation",
            Error::ChainAborted { .. } => "chain_aborted",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
