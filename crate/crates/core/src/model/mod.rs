//! The surface vision transformer encoder.

mod config;
mod forward;
mod mpp;
mod params;

#[cfg(test)]
mod gradcheck;

pub use config::{HeadKind, SiTConfig, PROFILES};
pub use forward::{
    backward, deconfound_embed, embed_backward, embed_forward, embed_sequence, ffn_backward, ffn_forward, forward,
    forward_with_cache, mhsa_backward, mhsa_forward, AttentionCache, AttentionStack, BlockCache, Confound,
    EmbedCache, FfnCache, ForwardCache,
};
pub use mpp::{mpp_corrupt, mpp_loss, mpp_step, Corruption, MppPlan, MASK_TOKEN_SHARE, SWAP_SHARE};
pub use params::{Block, Deconfounder, MppHead, SiTModel, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
