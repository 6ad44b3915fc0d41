use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mutabnet::data::SynthConfig;
use mutabnet::model::{BackboneConfig, ModelConfig, Preset};
use mutabnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Optional replacements for preset model fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub image_size: Option<usize>,
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub ffn_mult: Option<usize>,
    pub html_blocks: Option<usize>,
    pub cell_blocks: Option<usize>,
    pub html_window: Option<usize>,
    pub cell_window: Option<usize>,
    pub max_structure_len: Option<usize>,
    pub max_cell_len: Option<usize>,
    pub backbone: Option<BackboneConfig>,
}

impl ModelOverrides {
    pub fn apply(&self, c: &mut ModelConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(image_size, d, heads, ffn_mult, html_blocks, cell_blocks, html_window, cell_window, max_structure_len, max_cell_len);
        if let Some(b) = &self.backbone {
            c.backbone = b.clone();
        }
    }
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub preset: Option<Preset>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
    /// Standardize image intensities before the encoder.
    pub standardize: bool,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).context("serializing run config")?;
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn require_dir(flag: Option<PathBuf>, config: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(config).with_context(|| format!("--{name} is required (flag or config file)"))
}
