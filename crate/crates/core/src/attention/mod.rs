//! Attention network consuming position encoders.

mod encoder;
mod gradcheck;
mod layer;
mod model;

pub use encoder::{encode_qk, Encoder, TokenRotation};
pub use gradcheck::{gradient_check, GradientReport, TensorCheck};
pub use layer::{attention_forward, AttentionLayer, LayerForward};
pub use model::{Block, BlockForward, FeedForward, ForwardPass, Model, ModelConfig, Objective};
