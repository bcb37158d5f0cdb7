//! Objectness CNN: layers, backpropagation, ADAM, training and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, Moments};
pub use checkpoint::{
    decode_checkpoint, decode_tensors, encode_checkpoint, load_checkpoint, save_checkpoint,
    CheckpointMeta, NamedTensor, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{BatchNorm, Mode};
pub use network::{
    Gradients, Network, FLAT_FEATURES, INPUT_SIZE, PARAMETER_COUNT, PARAM_NAMES, RUNNING_STAT_NAMES,
};
pub use tensor::{Scalar, Tensor};
pub use train::{
    evaluate_loss, predict_crops, train, train_with_progress, EpochRecord, Example, TrainConfig,
    TrainOutcome,
};
