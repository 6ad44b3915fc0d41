use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected tiny or full)"))),
        }
    }
}

/// Convolutional stages of the encoder. Stage `i` has `blocks[i]` residual
/// blocks, the first one strided by `strides[i]`, optionally followed by a
/// global-context block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stem: usize,
    pub channels: Vec<usize>,
    pub blocks: Vec<usize>,
    pub strides: Vec<usize>,
    pub gca: Vec<bool>,
    /// Bottleneck of each global-context block is `channels / gca_ratio`.
    pub gca_ratio: usize,
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        BackboneConfig {
            stem: 16,
            channels: vec![16, 32, 48, 64],
            blocks: vec![1, 1, 1, 1],
            strides: vec![2, 2, 2, 1],
            gca: vec![false, true, true, true],
            gca_ratio: 4,
        }
    }

    pub fn full() -> Self {
        BackboneConfig {
            stem: 64,
            channels: vec![64, 128, 256, 512],
            blocks: vec![1, 2, 5, 4],
            strides: vec![2, 2, 2, 1],
            gca: vec![false, true, true, true],
            gca_ratio: 16,
        }
    }

    /// Side length of the feature map for a square input of `size`.
    pub fn output_side(&self, size: usize) -> usize {
        self.strides.iter().fold(size, |s, &k| s.div_ceil(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: Preset,
    pub image_size: usize,
    pub d: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub html_blocks: usize,
    pub cell_blocks: usize,
    pub html_window: usize,
    pub cell_window: usize,
    /// Cap on structure decoder inputs, start token included.
    pub max_structure_len: usize,
    /// Cap on cell decoder inputs, start token included.
    pub max_cell_len: usize,
    pub structure_vocab: usize,
    pub cell_vocab: usize,
    pub backbone: BackboneConfig,
}

impl ModelConfig {
    pub fn full(structure_vocab: usize, cell_vocab: usize) -> Self {
        ModelConfig {
            preset: Preset::Full,
            image_size: 520,
            d: 512,
            heads: 8,
            ffn_mult: 4,
            html_blocks: 3,
            cell_blocks: 1,
            html_window: 300,
            cell_window: 300,
            max_structure_len: 800,
            max_cell_len: 8000,
            structure_vocab,
            cell_vocab,
            backbone: BackboneConfig::full(),
        }
    }

    pub fn tiny(structure_vocab: usize, cell_vocab: usize) -> Self {
        ModelConfig {
            preset: Preset::Tiny,
            image_size: 64,
            d: 64,
            heads: 4,
            ffn_mult: 4,
            html_blocks: 3,
            cell_blocks: 1,
            html_window: 300,
            cell_window: 300,
            max_structure_len: 100,
            max_cell_len: 200,
            structure_vocab,
            cell_vocab,
            backbone: BackboneConfig::tiny(),
        }
    }

    pub fn preset(preset: Preset, structure_vocab: usize, cell_vocab: usize) -> Self {
        match preset {
            Preset::Tiny => Self::tiny(structure_vocab, cell_vocab),
            Preset::Full => Self::full(structure_vocab, cell_vocab),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.d % 4 != 0 {
            return bad(format!("d = {} must be divisible by 4", self.d));
        }
        if self.html_window == 0 || self.cell_window == 0 {
            return bad("attention windows must be at least 1".into());
        }
        if self.max_structure_len < 2 || self.max_cell_len < 2 {
            return bad("length caps must be at least 2".into());
        }
        if self.html_blocks == 0 || self.cell_blocks == 0 || self.ffn_mult == 0 {
            return bad("block counts and ffn_mult must be positive".into());
        }
        if self.structure_vocab < 4 || self.cell_vocab < 4 {
            return bad("vocabularies must hold the special tokens".into());
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        let b = &self.backbone;
        let n = b.channels.len();
        if n == 0 || b.blocks.len() != n || b.strides.len() != n || b.gca.len() != n {
            return bad("backbone stage lists must be non-empty and of equal length".into());
        }
        if b.stem == 0 || b.channels.contains(&0) || b.strides.contains(&0) || b.gca_ratio == 0 {
            return bad("backbone sizes must be positive".into());
        }
        if b.blocks.contains(&0) {
            return bad("every backbone stage needs at least one block".into());
        }
        Ok(())
    }
}
