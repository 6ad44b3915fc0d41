use std::path::Path;

use mutabnet_autodiff::io::{load_checkpoint, save_checkpoint};

use super::{Model, ModelConfig};
use crate::data::Vocabs;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: Model,
    pub params: ParamStore,
    pub vocabs: Vocabs,
    pub meta: toml::Table,
}

/// Writes tensors, the model config and both vocabularies into `dir`.
/// Entries of `extra` are stored next to the config in the manifest.
pub fn save_model(dir: &Path, model: &Model, params: &ParamStore, vocabs: &Vocabs, extra: toml::Table) -> Result<()> {
    let tensors: Vec<(String, _)> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let mut meta = extra;
    let config = toml::Table::try_from(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    meta.insert("model".into(), toml::Value::Table(config));
    save_checkpoint(dir, &tensors, meta)?;
    vocabs.save(dir)
}

pub fn load_model(dir: &Path) -> Result<LoadedModel> {
    let (manifest, tensors) = load_checkpoint(dir)?;
    let config: ModelConfig = manifest
        .meta
        .get("model")
        .cloned()
        .ok_or_else(|| Error::Config(format!("{}: manifest has no model config", dir.display())))?
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", dir.display())))?;
    let (model, mut params) = Model::new(config, 0)?;
    if tensors.len() != params.len() {
        return Err(Error::Config(format!(
            "{}: checkpoint has {} tensors, model expects {}",
            dir.display(),
            tensors.len(),
            params.len()
        )));
    }
    for (name, t) in tensors {
        let id = params
            .find(&name)
            .ok_or_else(|| Error::Config(format!("{}: unexpected tensor {name}", dir.display())))?;
        if params.get(id).shape() != t.shape() {
            return Err(Error::Config(format!("{}: tensor {name} has shape {:?}", dir.display(), t.shape())));
        }
        params.set(id, t.to_vec());
    }
    Ok(LoadedModel {
        model,
        params,
        vocabs: Vocabs::load(dir)?,
        meta: manifest.meta,
    })
}
