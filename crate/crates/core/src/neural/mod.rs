//! Causal complex-mask network applied to the reference microphone.

mod checkpoint;
mod lstm;
mod net;
mod scalar;
mod train;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use net::{
    apply_mask, featurize, infer_mask, loss_and_grad, reference_first, Features, MaskNet, MaskNetConfig, TrainExample,
    MIN_FEATURE_SCALE,
};
pub use scalar::Scalar;
pub use train::{evaluate_loss, history_csv, train, write_history, EpochRecord, TrainConfig, TrainOutcome};
