//! The VGG-style embedding network, its Siamese application and checkpoints.

mod checkpoint;
mod forward;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use forward::{
    backward, backward_pair, distance, embed, embed_tensor, forward, forward_pair, forward_tensor,
    Embedding, ForwardCache, ParamGrads,
};
pub use model::{
    build_model, validate_specs, Layer, LayerSpec, Model, ModelConfig, Params, EMBEDDING_DIM,
    INPUT_CHANNELS, KERNEL_SIZE, PADDING, STRIDE,
};
