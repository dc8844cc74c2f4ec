//! Two-branch recurrent gesture classifier, trained from scratch.
//!
//! Each motion frame is split into its velocity block and its shape block;
//! each block feeds its own LSTM, the final hidden states are concatenated,
//! passed through dropout (training only) and a fully connected layer, and
//! turned into class probabilities with a softmax.

mod adam;
mod lstm;
mod model;
mod online;
mod train;

pub use adam::{adam_step, OptimizerState};
pub use model::{softmax, Gradients, ModelMeta, NetConfig, NetMode, TensorSpec, TraceSeqModel};
pub use online::{EventTrigger, GestureEvent, GestureRecognizer, TriggerConfig};
pub use train::{accuracy, predict_labels, train, train_with, EpochStats, TrainConfig};
