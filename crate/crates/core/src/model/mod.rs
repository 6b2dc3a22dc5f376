//! Prunable CNN models, channel masks and checkpoint persistence.

pub mod checkpoint;
pub mod prunable;
pub mod spec;

pub use checkpoint::{encoded_header_len, load_checkpoint, save_checkpoint};
pub use prunable::{
    apply_mask, build_model, flatten_grads, ChannelMask, ForwardTrace, LayerParams, ModelGrads,
    PrunableModel, PrunePlan,
};
pub use spec::{three_block_cnn, two_block_cnn, LayerDesc, ModelSpec};
