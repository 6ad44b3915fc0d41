//! Layers built on the autodiff tensors: convolution, residual and
//! global-context blocks, multi-head attention with local causal masks,
//! sinusoidal position encodings.

mod attention;
mod conv;
mod layers;
mod params;
mod position;

pub use attention::{local_attention_mask, AttentionBlock, AttentionLayer, MaskKind, MaskSpec, ProjectedMemory};
pub use conv::{Conv2d, GcaBlock, ResidualBlock};
pub use layers::{FeedForward, LayerNorm, Linear, LN_EPS};
pub use params::{seeded_rng, ParamId, ParamInit, ParamStore};
pub use position::{grid_encoding, positional_encoding, positional_encoding_2d, sequence_encoding};
