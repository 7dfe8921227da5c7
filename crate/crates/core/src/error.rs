use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Power iteration failed to reach the residual target; the kernel is
    /// most likely not ergodic.
    #[error("stationary distribution did not converge: residual {residual:e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("feature matrix is rank deficient after {attempts} attempts")]
    RankDeficient { attempts: usize },

    #[error("Gram matrix is singular under the stationary weighting (smallest eigenvalue {nu:e})")]
    SingularGram { nu: f64 },

    #[error("matrix A is numerically singular")]
    SingularA,

    #[error("no sample size up to 2^63 satisfies the invertibility condition")]
    NotFound,

    #[error("{failed} of {total} instances failed, above the 5% abort threshold")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Whether the harness may recover by regenerating the instance.
    pub fn is_instance_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::SingularGram { .. }
                | Error::RankDeficient { .. }
                | Error::SingularA
                | Error::SingularSystem(_)
        )
    }
}
