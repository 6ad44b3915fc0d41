use mutabnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{local_attention_mask, sequence_encoding, AttentionBlock, LayerNorm, Linear, MaskSpec, ParamId, ParamInit, ParamStore, ProjectedMemory};
use crate::tokenizer::SEP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LtoR,
    RtoL,
}

impl Direction {
    fn index(self) -> usize {
        match self {
            Direction::LtoR => 0,
            Direction::RtoL => 1,
        }
    }
}

/// Per-block key/value projections of the encoder memory.
#[derive(Debug, Clone)]
pub struct DecoderMemory {
    pub blocks: Vec<ProjectedMemory>,
}

#[derive(Debug, Clone)]
pub struct HtmlDecoderOutput {
    /// `[len, d]` final normalized states.
    pub hidden: Tensor,
    /// `[len, structure_vocab]`
    pub token_logits: Tensor,
    /// `[len, 4]` in `[0, 1]`: x_min, y_min, x_max, y_max.
    pub bbox_pred: Tensor,
}

fn embed(table: &Tensor, ids: &[usize], d: usize) -> Result<Tensor> {
    if ids.is_empty() {
        return Err(Error::Config("decoder input must contain at least the start token".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= table.dim(0)) {
        return Err(Error::OutOfVocabulary { token: bad.to_string() });
    }
    Ok(table.select_rows(ids)?.add(&sequence_encoding(ids.len(), d)?)?)
}

fn run_blocks(p: &ParamStore, blocks: &[AttentionBlock], x: Tensor, mem: &DecoderMemory, window: usize) -> Result<Tensor> {
    let mask = local_attention_mask(x.dim(0), MaskSpec::causal_local(window));
    let mut x = x;
    for (block, kv) in blocks.iter().zip(&mem.blocks) {
        x = block.forward_projected(p, &x, kv, &mask)?;
    }
    Ok(x)
}

/// Structure decoder shared by both reading directions.
#[derive(Debug, Clone)]
pub struct HtmlDecoder {
    embedding: ParamId,
    direction: ParamId,
    blocks: Vec<AttentionBlock>,
    norm: LayerNorm,
    token_head: Linear,
    bbox_head: Linear,
    d: usize,
    window: usize,
    max_len: usize,
}

impl HtmlDecoder {
    pub fn new(init: &mut ParamInit<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d;
        Ok(HtmlDecoder {
            embedding: init.normal("embedding", &[cfg.structure_vocab, d], 1.0),
            direction: init.normal("direction", &[2, d], 1.0),
            blocks: (0..cfg.html_blocks)
                .map(|i| AttentionBlock::new(&mut init.sub(&format!("block{i}")), d, cfg.heads, cfg.ffn_mult * d, true))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(&mut init.sub("norm"), d),
            token_head: Linear::new(&mut init.sub("token_head"), d, cfg.structure_vocab, true),
            bbox_head: Linear::new(&mut init.sub("bbox_head"), d, 4, true),
            d,
            window: cfg.html_window,
            max_len: cfg.max_structure_len,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn project_memory(&self, p: &ParamStore, memory: &Tensor) -> Result<DecoderMemory> {
        Ok(DecoderMemory {
            blocks: self.blocks.iter().map(|b| b.project_memory(p, memory)).collect::<Result<_>>()?,
        })
    }

    /// Teacher-forced pass over `inputs` (starting with the start token).
    pub fn forward(&self, p: &ParamStore, inputs: &[usize], dir: Direction, mem: &DecoderMemory) -> Result<HtmlDecoderOutput> {
        if inputs.len() > self.max_len {
            return Err(Error::TooLong {
                len: inputs.len(),
                max: self.max_len,
            });
        }
        let mut onehot = vec![0.0; 2];
        onehot[dir.index()] = 1.0;
        let dir_row = Tensor::new(onehot, &[1, 2])?.matmul(p.get(self.direction))?;
        let x = embed(p.get(self.embedding), inputs, self.d)?.add_row_broadcast(&dir_row)?;
        let x = run_blocks(p, &self.blocks, x, mem, self.window)?;
        let hidden = self.norm.forward(p, &x)?;
        Ok(HtmlDecoderOutput {
            token_logits: self.token_head.forward(p, &hidden)?,
            bbox_pred: self.bbox_head.forward(p, &hidden)?.sigmoid(),
            hidden,
        })
    }
}

/// Row of the structure hidden states injected at each cell decoder input.
///
/// Input position `q` feeds the prediction of the next cell token, which
/// belongs to cell `k` = number of separators in `inputs[..=q]`; its feature
/// is the structure state right after that cell's opening token. Positions
/// past the last cell reuse the last cell's feature.
pub fn injection_rows(inputs: &[usize], alignment: &[usize], hidden_len: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = alignment.iter().find(|&&a| a + 1 >= hidden_len) {
        return Err(Error::Alignment {
            expected: hidden_len.saturating_sub(1),
            found: bad + 1,
        });
    }
    let mut seps = 0;
    Ok(inputs
        .iter()
        .map(|&t| {
            if t == SEP {
                seps += 1;
            }
            alignment[seps.min(alignment.len() - 1)] + 1
        })
        .collect())
}

/// Multi-cell content decoder: one causal pass over all cells joined by SEP.
#[derive(Debug, Clone)]
pub struct CellDecoder {
    embedding: ParamId,
    blocks: Vec<AttentionBlock>,
    norm: LayerNorm,
    head: Linear,
    d: usize,
    window: usize,
    max_len: usize,
}

impl CellDecoder {
    pub fn new(init: &mut ParamInit<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d;
        Ok(CellDecoder {
            embedding: init.normal("embedding", &[cfg.cell_vocab, d], 1.0),
            blocks: (0..cfg.cell_blocks)
                .map(|i| AttentionBlock::new(&mut init.sub(&format!("block{i}")), d, cfg.heads, cfg.ffn_mult * d, true))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(&mut init.sub("norm"), d),
            head: Linear::new(&mut init.sub("head"), d, cfg.cell_vocab, true),
            d,
            window: cfg.cell_window,
            max_len: cfg.max_cell_len,
        })
    }

    pub fn project_memory(&self, p: &ParamStore, memory: &Tensor) -> Result<DecoderMemory> {
        Ok(DecoderMemory {
            blocks: self.blocks.iter().map(|b| b.project_memory(p, memory)).collect::<Result<_>>()?,
        })
    }

    /// Teacher-forced logits `[len, cell_vocab]`. `html_hidden` are the
    /// structure states for `[SOS] + structure`, `alignment` the structure
    /// position of each cell's opening token.
    pub fn forward(&self, p: &ParamStore, inputs: &[usize], html_hidden: &Tensor, alignment: &[usize], mem: &DecoderMemory) -> Result<Tensor> {
        if inputs.len() > self.max_len {
            return Err(Error::TooLong {
                len: inputs.len(),
                max: self.max_len,
            });
        }
        let mut x = embed(p.get(self.embedding), inputs, self.d)?;
        if !alignment.is_empty() {
            let rows = injection_rows(inputs, alignment, html_hidden.dim(0))?;
            x = x.add(&html_hidden.select_rows(&rows)?)?;
        }
        let x = run_blocks(p, &self.blocks, x, mem, self.window)?;
        let h = self.norm.forward(p, &x)?;
        self.head.forward(p, &h)
    }
}
