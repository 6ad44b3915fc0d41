//! The table recognition network: image encoder, direction-conditioned
//! structure decoder with a bbox head, and the multi-cell content decoder.

mod checkpoint;
mod config;
mod decode;
mod decoder;
mod encoder;

pub use checkpoint::{load_model, save_model, LoadedModel};
pub use config::{BackboneConfig, ModelConfig, Preset};
pub use decode::{assemble_html, greedy_decode_cells, greedy_decode_structure, recognize, Recognition, StructurePrediction};
pub use decoder::{injection_rows, CellDecoder, DecoderMemory, Direction, HtmlDecoder, HtmlDecoderOutput};
pub use encoder::{Encoder, EncoderOutput};

use crate::error::Result;
use crate::nn::{seeded_rng, ParamInit, ParamStore};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub html: HtmlDecoder,
    pub cell: CellDecoder,
}

/// Memory projections for both decoders, computed once per image.
#[derive(Debug, Clone)]
pub struct ImageContext {
    pub encoded: EncoderOutput,
    pub html: DecoderMemory,
    pub cell: DecoderMemory,
}

impl Model {
    /// Builds the layers and a freshly initialized parameter store.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(seed);
        let mut init = ParamInit::new(&mut store, &mut rng);
        let encoder = Encoder::new(&mut init.sub("encoder"), &config);
        let html = HtmlDecoder::new(&mut init.sub("html"), &config)?;
        let cell = CellDecoder::new(&mut init.sub("cell"), &config)?;
        Ok((
            Model {
                config,
                encoder,
                html,
                cell,
            },
            store,
        ))
    }

    pub fn encode(&self, p: &ParamStore, image: &mutabnet_autodiff::Tensor) -> Result<ImageContext> {
        let encoded = self.encoder.forward(p, image)?;
        Ok(ImageContext {
            html: self.html.project_memory(p, &encoded.memory)?,
            cell: self.cell.project_memory(p, &encoded.memory)?,
            encoded,
        })
    }
}
