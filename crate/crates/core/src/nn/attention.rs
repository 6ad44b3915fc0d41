use mutabnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{FeedForward, LayerNorm};
use super::params::{ParamId, ParamInit, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    None,
    CausalLocal,
}

/// Which keys a query may attend to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub window: usize,
}

impl MaskSpec {
    pub fn none() -> Self {
        MaskSpec {
            kind: MaskKind::None,
            window: 0,
        }
    }

    pub fn causal_local(window: usize) -> Self {
        MaskSpec {
            kind: MaskKind::CausalLocal,
            window,
        }
    }

    /// Query `i` sees key `j` iff `0 <= i - j <= window` (causal-local).
    pub fn admits(&self, i: usize, j: usize) -> bool {
        match self.kind {
            MaskKind::None => true,
            MaskKind::CausalLocal => j <= i && i - j <= self.window,
        }
    }
}

/// Additive `[len, len]` mask: 0 where admitted, `-inf` elsewhere.
pub fn local_attention_mask(len: usize, spec: MaskSpec) -> Tensor {
    let mut data = Vec::with_capacity(len * len);
    for i in 0..len {
        for j in 0..len {
            data.push(if spec.admits(i, j) { 0.0 } else { f64::NEG_INFINITY });
        }
    }
    Tensor::new(data, &[len, len]).expect("len >= 1")
}

/// Keys and values projected once from a fixed memory sequence.
#[derive(Debug, Clone)]
pub struct ProjectedMemory {
    pub keys: Tensor,
    pub values: Tensor,
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub output: ParamId,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttentionLayer {
    pub fn new(init: &mut ParamInit<'_>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{dim} channels cannot be split into {heads} heads")));
        }
        let std = (1.0 / dim as f64).sqrt();
        Ok(AttentionLayer {
            query: init.normal("query", &[dim, dim], std),
            key: init.normal("key", &[dim, dim], std),
            value: init.normal("value", &[dim, dim], std),
            output: init.normal("output", &[dim, dim], std),
            heads,
            head_dim: dim / heads,
        })
    }

    pub fn project_memory(&self, p: &ParamStore, y: &Tensor) -> Result<ProjectedMemory> {
        Ok(ProjectedMemory {
            keys: y.matmul(p.get(self.key))?,
            values: y.matmul(p.get(self.value))?,
        })
    }

    /// `x` attends over `y`; `mask` is an additive `[len_x, len_y]` tensor.
    pub fn forward(&self, p: &ParamStore, x: &Tensor, y: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let kv = self.project_memory(p, y)?;
        self.attend(p, x, &kv, mask)
    }

    pub fn attend(&self, p: &ParamStore, x: &Tensor, kv: &ProjectedMemory, mask: Option<&Tensor>) -> Result<Tensor> {
        let q = x.matmul(p.get(self.query))?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * self.head_dim, (h + 1) * self.head_dim);
            let qh = if self.heads == 1 { q.clone() } else { q.slice_cols(lo, hi)? };
            let kh = if self.heads == 1 { kv.keys.clone() } else { kv.keys.slice_cols(lo, hi)? };
            let vh = if self.heads == 1 { kv.values.clone() } else { kv.values.slice_cols(lo, hi)? };
            let mut logits = qh.matmul(&kh.transpose()?)?.scale(scale);
            if let Some(m) = mask {
                logits = logits.add(m)?;
            }
            heads.push(logits.softmax(1)?.matmul(&vh)?);
        }
        let z = if heads.len() == 1 {
            heads.pop().expect("one head")
        } else {
            Tensor::concat_cols(&heads)?
        };
        Ok(z.matmul(p.get(self.output))?)
    }
}

/// Masked self-attention, cross-attention over image memory and a
/// feed-forward layer, each wrapped in a residual connection with layer
/// normalization (pre- or post-norm).
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub self_norm: LayerNorm,
    pub self_attn: AttentionLayer,
    pub cross_norm: LayerNorm,
    pub cross_attn: AttentionLayer,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub pre_norm: bool,
}

impl AttentionBlock {
    pub fn new(init: &mut ParamInit<'_>, dim: usize, heads: usize, ffn_hidden: usize, pre_norm: bool) -> Result<Self> {
        Ok(AttentionBlock {
            self_norm: LayerNorm::new(&mut init.sub("self_norm"), dim),
            self_attn: AttentionLayer::new(&mut init.sub("self_attn"), dim, heads)?,
            cross_norm: LayerNorm::new(&mut init.sub("cross_norm"), dim),
            cross_attn: AttentionLayer::new(&mut init.sub("cross_attn"), dim, heads)?,
            ffn_norm: LayerNorm::new(&mut init.sub("ffn_norm"), dim),
            ffn: FeedForward::new(&mut init.sub("ffn"), dim, ffn_hidden),
            pre_norm,
        })
    }

    pub fn project_memory(&self, p: &ParamStore, memory: &Tensor) -> Result<ProjectedMemory> {
        self.cross_attn.project_memory(p, memory)
    }

    pub fn forward(&self, p: &ParamStore, seq: &Tensor, memory: &Tensor, mask: MaskSpec) -> Result<Tensor> {
        let kv = self.project_memory(p, memory)?;
        let mask = local_attention_mask(seq.dim(0), mask);
        self.forward_projected(p, seq, &kv, &mask)
    }

    /// Same as [`Self::forward`] with the memory projection and mask precomputed.
    pub fn forward_projected(&self, p: &ParamStore, seq: &Tensor, kv: &ProjectedMemory, mask: &Tensor) -> Result<Tensor> {
        let mut x = seq.clone();
        if self.pre_norm {
            let h = self.self_norm.forward(p, &x)?;
            x = x.add(&self.self_attn.forward(p, &h, &h, Some(mask))?)?;
            let h = self.cross_norm.forward(p, &x)?;
            x = x.add(&self.cross_attn.attend(p, &h, kv, None)?)?;
            let h = self.ffn_norm.forward(p, &x)?;
            x = x.add(&self.ffn.forward(p, &h)?)?;
        } else {
            let h = self.self_attn.forward(p, &x, &x, Some(mask))?;
            x = self.self_norm.forward(p, &x.add(&h)?)?;
            let h = self.cross_attn.attend(p, &x, kv, None)?;
            x = self.cross_norm.forward(p, &x.add(&h)?)?;
            let h = self.ffn.forward(p, &x)?;
            x = self.ffn_norm.forward(p, &x.add(&h)?)?;
        }
        Ok(x)
    }
}
