//! ViT image encoder: patch embedding, pre-norm attention/MLP blocks and the
//! final class-token feature, with adapter slots on the query and value
//! projections.

mod attention;
mod block;
mod config;
mod embed;
mod encoder;

pub use attention::{attention_head, AdapterMasks, Attention, AttentionCache, GradScope};
pub use block::{BlockCache, TransformerBlock};
pub use config::{EncoderConfig, Normalization, CLIP_MEAN, CLIP_STD};
pub use embed::{patchify, patchify_and_embed, ImageBatch, PatchEmbedder};
pub use encoder::{encoder_forward, multi_head_attention, Encoder, EncoderCache, INIT_STD};
