use ess_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid pose {0}")]
    InvalidPose(String),
    #[error("invalid similarity threshold: {0}")]
    InvalidThreshold(String),
    #[error("weight parameters must be positive and finite (alpha {alpha}, beta {beta})")]
    InvalidWeightParams { alpha: f64, beta: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("floor plan: {0}")]
    Plan(String),
    #[error("pose ({x:.3}, {y:.3}) is not in free space")]
    NotInFreeSpace { x: f64, y: f64 },
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("image: {0}")]
    Image(String),
    #[error("empty dictionary")]
    EmptyQueue,
    #[error("no positives for query")]
    NoPositives,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("architecture mismatch: checkpoint has {found:?}, configuration expects {expected:?}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("evaluation: {0}")]
    Eval(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
