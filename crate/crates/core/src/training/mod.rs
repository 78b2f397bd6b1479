//! Fine-tuning of the adapters and the memory keys.
//!
//! Each training image is encoded with its prior tokens, every candidate
//! pair is scored against the memory with the current keys, scores are
//! suppressed with `lambda_train` and compared with the assigned targets by
//! focal loss. Value matrices and semantic rows stay frozen.

mod checkpoint;
mod examples;
mod finetune;
mod gradcheck;
mod model;
mod targets;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointManifest, ACCK_MAGIC, ACCK_VERSION};
pub use examples::{prepare_image, prepare_training_set, PreparedImage, TrainExample};
pub use finetune::{finetune, TrainState};
pub use gradcheck::{toy_gradcheck, TOY_EMBED_DIM};
pub use model::Model;
pub use targets::{assign_targets, focal_loss, PairTarget};

#[cfg(test)]
mod tests;
