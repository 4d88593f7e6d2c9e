//! Small convolutional encoder with linear task heads, Adam, and checkpoints.

mod checkpoint;
mod encoder;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{
    features_to_batch, init_model, BnPolicy, Bound, EncoderConfig, FreezePolicy, ModelState,
    Outputs, Param, ParamGroup,
};
pub use optim::{AdamConfig, LearningRates};
