use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// config problems exit 2, iteration failures exit 3, everything else 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("mode cutoff K = {k} too small: mode operator still indefinite (min eigenvalue {lambda_min:.6e})")]
    KTooSmall { k: usize, lambda_min: f64 },

    #[error("graph leaves the embedded tubular neighbourhood: {0}")]
    GraphDegenerate(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last diff {last_diff:.3e})")]
    NonConvergence { iterations: usize, last_diff: f64 },

    #[error("iterate left the contraction ball at iteration {iteration}: |u|_C2 = {norm:.3e} > eta = {eta:.3e}")]
    BallExit { iteration: usize, norm: f64, eta: f64 },

    #[error("checkpoint incompatible with current config: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error per the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonConvergence { .. } | Error::BallExit { .. } => 3,
            _ => 1,
        }
    }
}
