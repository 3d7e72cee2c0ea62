//! A small ViT detection backbone with windowed and global attention blocks,
//! supporting dense forward passes and masked forward passes that reuse
//! per-block reference tensors.

mod attention;
mod block;
mod config;
pub mod io;
mod model;
mod tokens;
mod trace;

pub use attention::{attention, multi_head_attention, AttentionInputs};
pub use block::{
    attention_sublayer, ffn_sublayer, msa_block_global, wmsa_block, wmsa_block_masked, BlockWeights,
};
pub use config::{default_global_blocks, Backbone, ModelConfig};
pub use model::{ForwardOutput, Model, ReferenceState};
pub use tokens::{gather, scatter, TokenSet};
pub use trace::OpTrace;
