//! Decision-transformer variants over interleaved (return, state, action)
//! tokens.
//!
//! The four variants share one skeleton and differ in two switches: an
//! entanglement mix after multi-head attention, and a multi-channel
//! feedforward combined by softmax interference weights.

mod config;
mod forward;
mod params;

pub use config::{Kind, ModelConfig, ModelVariant};
pub use forward::{
    attention, causal_mask, embed_window, feed_forward, forward, WindowBatch, LN_EPS,
};
pub use params::{
    init_params, interference_weights, variant_delta, AttnIdx, ChannelIdx, EmbedIdx, EntangleIdx, FfIdx, HeadIdx,
    LayerIdx, Layout, LnIdx, ParamKind, ParamMeta, ParameterSet,
};
