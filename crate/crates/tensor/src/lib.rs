//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! Enough machinery to train a small convolutional encoder on the CPU:
//! matmul, padded 3×3 convolution, pooling, elementwise ops, normalisation,
//! stabilised log-sum-exp / cross-entropy, SGD, and a byte-exact parameter
//! checkpoint format. Everything is generic over [`Element`] so the same
//! code runs in `f32` for training and `f64` for gradient checks.

mod element;
mod graph;
mod params;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;

pub use element::Element;
pub use graph::{conv_out_hw, Gradients, Tape, Var};
pub use optim::Sgd;
pub use params::{kaiming_uniform, BoundParams, ParameterSet};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("cannot normalise a vector with norm {0:e}")]
    NearZeroNorm(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter sets are misaligned: {0}")]
    Misaligned(String),
    #[error("no parameter named {0:?}")]
    MissingParameter(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
