//! Momentum contrast with pose-mined positives.

pub mod loss;
pub mod queue;
pub mod train;

pub use loss::{loss_baseline, loss_mb, loss_mw, LossMode};
pub use queue::{fallback_index, find_positives, DictionaryQueue, QueueEntry};
pub use train::{
    epoch_order, momentum_blend, EncoderPair, EnqueuePolicy, EpochMetrics, LossConfig, OptimConfig, TrainConfig, Trainer,
    TrainingSet,
};
