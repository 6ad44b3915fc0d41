use mutabnet_autodiff::Tensor;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{grid_encoding, Conv2d, GcaBlock, ParamInit, ParamStore, ResidualBlock};

/// Flattened image features.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[height * width, d]`, row-major over the feature map.
    pub memory: Tensor,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResidualBlock>,
    gca: Option<GcaBlock>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Conv2d,
    stages: Vec<Stage>,
    /// 1x1 projection to `d` channels when the last stage is narrower or wider.
    project: Option<Conv2d>,
    image_size: usize,
    d: usize,
}

impl Encoder {
    pub fn new(init: &mut ParamInit<'_>, cfg: &ModelConfig) -> Self {
        let b = &cfg.backbone;
        let stem = Conv2d::new(&mut init.sub("stem"), 1, b.stem, 3, 1, true);
        let mut input = b.stem;
        let mut stages = Vec::new();
        for (i, &out) in b.channels.iter().enumerate() {
            let mut stage_init = init.sub(&format!("stage{i}"));
            let blocks = (0..b.blocks[i])
                .map(|k| {
                    let (inp, stride) = if k == 0 { (input, b.strides[i]) } else { (out, 1) };
                    ResidualBlock::new(&mut stage_init.sub(&format!("block{k}")), inp, out, stride)
                })
                .collect();
            let gca = b.gca[i].then(|| GcaBlock::new(&mut stage_init.sub("gca"), out, (out / b.gca_ratio).max(1)));
            stages.push(Stage { blocks, gca });
            input = out;
        }
        let project = (input != cfg.d).then(|| Conv2d::new(&mut init.sub("project"), input, cfg.d, 1, 1, true));
        Encoder {
            stem,
            stages,
            project,
            image_size: cfg.image_size,
            d: cfg.d,
        }
    }

    /// `[1, S, S]` image to `[H'W', d]` memory with 2-D position encodings added.
    pub fn forward(&self, p: &ParamStore, image: &Tensor) -> Result<EncoderOutput> {
        let s = self.image_size;
        if image.shape() != [1, s, s] {
            return Err(Error::Config(format!("image shape {:?} does not match the model input [1, {s}, {s}]", image.shape())));
        }
        let mut x = self.stem.forward(p, image)?.relu();
        for stage in &self.stages {
            for block in &stage.blocks {
                x = block.forward(p, &x)?;
            }
            if let Some(gca) = &stage.gca {
                x = gca.forward(p, &x)?;
            }
        }
        if let Some(proj) = &self.project {
            x = proj.forward(p, &x)?;
        }
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        debug_assert_eq!(c, self.d);
        let flat = x.reshape(&[c, h * w])?.transpose()?;
        let memory = flat.add(&grid_encoding(h, w, self.d)?)?;
        Ok(EncoderOutput { memory, height: h, width: w })
    }
}
