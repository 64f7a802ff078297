use thiserror::Error;

use crate::trainer::EpochReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration {coords:?} lies outside the environment bounds")]
    OutOfBounds { coords: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("environment {env_id} is too dense to sample: acceptance rate {rate:.4} is below 1%")]
    EnvironmentTooDense { env_id: u32, rate: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported primitive: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient in batch {batch} at parameter {index}")]
    NonFiniteGradient { batch: usize, index: usize },

    #[error("arrival time is undefined for coincident configurations")]
    Coincident,

    #[error("speed must be strictly positive, got {0}")]
    NonPositiveSpeed(f64),

    #[error("training diverged at epoch {epoch}: loss guard fired {retries} times")]
    TrainingDiverged {
        epoch: usize,
        retries: usize,
        history: Vec<EpochReport>,
    },

    #[error("endpoint {0:?} is in collision")]
    EndpointInCollision(Vec<f64>),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteGradient { .. }
                | Error::NonPositiveSpeed(_)
                | Error::TrainingDiverged { .. }
        )
    }
}
