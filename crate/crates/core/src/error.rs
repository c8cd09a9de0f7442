use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid MMDP: {0}")]
    InvalidMmdp(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("capability of member {member} is not on the simplex (sum {sum}); set relax_simplex to accept it")]
    NonSimplexCapability { member: usize, sum: f64 },

    #[error("assembled transition row (state {state}, joint action {action}) is not a distribution (sum {sum})")]
    InvalidTransitionRow { state: usize, action: usize, sum: f64 },

    #[error("infeasible perturbation: {0}")]
    InfeasiblePerturbation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state space has {size} states, above the cap of {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("agent {agent} submitted unavailable action {action}")]
    UnavailableAction { agent: usize, action: usize },

    #[error("task distribution support is empty")]
    EmptySupport,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status: 3 for solver non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
