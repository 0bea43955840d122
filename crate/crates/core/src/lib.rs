//! Spatial-similarity contrastive learning: simulator, augmentation,
//! momentum-contrast training with pose-mined positives, and downstream
//! evaluation.

pub mod augment;
pub mod encoder;
pub mod env;
pub mod ess;
pub mod eval;
pub mod gradcheck;
mod error;
pub mod image;
pub mod spatial;

pub use error::{Error, Result};
