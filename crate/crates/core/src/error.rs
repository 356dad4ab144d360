use thiserror::Error;

/// Errors raised by the model, sampler, oracle and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite after jitter {jitter:e}")]
    SingularMatrix { jitter: f64 },

    #[error("design matrix is rank deficient (rank {rank} < {p}); offending columns: {columns:?}")]
    RankDeficient {
        rank: usize,
        p: usize,
        columns: Vec<usize>,
    },

    #[error("marginal likelihood diverges: needs rank(G) = p < n, got n = {n}, p = {p}, rank = {rank}")]
    DivergentIntegral { n: usize, p: usize, rank: usize },

    #[error("enumeration capped at n = {cap}, got n = {n}")]
    TooManyObservations { n: usize, cap: usize },

    #[error("quadrature did not converge: resolution {coarse} vs {fine} disagree by {gap:e}")]
    QuadratureNonConvergence { coarse: usize, fine: usize, gap: f64 },

    #[error("sampler failed at iteration {iter}: {source}")]
    Iteration {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("only {succeeded} of {total} replicates succeeded; first failure: {first}")]
    ScenarioFailed { succeeded: usize, total: usize, first: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("black box evaluation failed: {0}")]
    BlackBox(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures that stem from numerics rather than user input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularMatrix { .. }
            | Error::Numerical(_)
            | Error::QuadratureNonConvergence { .. }
            | Error::ScenarioFailed { .. } => true,
            Error::Iteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
