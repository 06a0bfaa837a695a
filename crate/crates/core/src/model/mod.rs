//! Decoder-only transformer over explicit position indices and an explicit
//! attention mask, trained with Adam on streamed sequences.
//!
//! Architecture: optional input layer norm, a linear input projection,
//! pre-norm blocks (multi-head attention with rotary phases taken from the
//! sequence's position indices, then a GELU feed-forward), a final layer
//! norm and a linear readout followed by a sigmoid at the prediction tokens.

mod adam;
mod checkpoint;
mod config;
mod forward;
mod params;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, TrainConfig};
pub use forward::{backward, forward, forward_cached, loss, loss_and_grad, ForwardCache};
pub use params::{LayerOffsets, Layout, ModelParams, TensorSpec};
pub use train::{train, train_with_hook, TrainLog, TrainLogRow, TrainOutput};
