//! Losses, the Adam optimizer, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::AdamState;
pub use checkpoint::{config_hash, Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use loss::{loss, LossKind, LossTarget};
pub use trainer::{
    evaluate_loss, masked_input, train, validation_set, EpochRecord, TrainConfig, TrainReport,
    THREADS_ENV,
};
