//! Teacher-forced training loop and training-set evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mutabnet_autodiff::Tensor;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{collate_encoded, BBox, Batch, EncodedSample, SeqLimits, TableSample, Vocabs};
use crate::error::{Error, Result};
use crate::losses::{bbox_loss, bml_loss, cross_entropy_masked, total_loss, LossParts, LossWeights};
use crate::model::{recognize, save_model, Direction, Model};
use crate::nn::{seeded_rng, ParamStore};
use crate::optim::{lr_schedule, Adam, AdamConfig, ScheduleSpec};
use crate::teds::{teds_batch_report, EvalPair, TedsReport};
use crate::tokenizer::{normalize_structure_tokens, PAD};

/// Unpadded teacher-forcing data of one sample.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub filename: String,
    pub image: Tensor,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub rtl_inputs: Vec<usize>,
    pub cell_inputs: Vec<usize>,
    pub cell_targets: Vec<usize>,
    pub alignment: Vec<usize>,
    pub bbox_targets: Vec<BBox>,
    pub bbox_mask: Vec<bool>,
}

impl TrainItem {
    /// Row `i` of a padded batch with the padding removed.
    pub fn from_batch(b: &Batch, i: usize) -> TrainItem {
        let n = b.structure_mask[i].iter().filter(|&&m| m).count();
        let m = b.cell_mask[i].iter().filter(|&&m| m).count();
        TrainItem {
            filename: b.filenames[i].clone(),
            image: b.images[i].clone(),
            inputs: b.structure_inputs[i][..n].to_vec(),
            targets: b.structure_targets[i][..n].to_vec(),
            rtl_inputs: b.rtl_inputs[i][..n].to_vec(),
            cell_inputs: b.cell_inputs[i][..m].to_vec(),
            cell_targets: b.cell_targets[i][..m].to_vec(),
            alignment: b.alignments[i].clone(),
            bbox_targets: b.bbox_targets[i][..n].to_vec(),
            bbox_mask: b.bbox_mask[i][..n].to_vec(),
        }
    }

    /// Items for every sample that fits the caps.
    pub fn from_samples(samples: &[EncodedSample], limits: SeqLimits) -> Vec<TrainItem> {
        let refs: Vec<&EncodedSample> = samples.iter().collect();
        let b = collate_encoded(&refs, limits);
        (0..b.len()).map(|i| TrainItem::from_batch(&b, i)).collect()
    }
}

/// Loss values of one sample or one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub html: f64,
    pub ce_ltr: f64,
    pub ce_rtl: f64,
    pub kl_ltr: f64,
    pub kl_rtl: f64,
    pub cell: f64,
    pub bbox: f64,
}

impl LossValues {
    fn add_scaled(&mut self, o: &LossValues, s: f64) {
        self.total += s * o.total;
        self.html += s * o.html;
        self.ce_ltr += s * o.ce_ltr;
        self.ce_rtl += s * o.ce_rtl;
        self.kl_ltr += s * o.kl_ltr;
        self.kl_rtl += s * o.kl_rtl;
        self.cell += s * o.cell;
        self.bbox += s * o.bbox;
    }
}

/// Full multi-task loss of one sample. With `bml` off only the
/// left-to-right pass runs and the structure loss is its cross-entropy.
pub fn sample_loss(model: &Model, p: &ParamStore, item: &TrainItem, w: &LossWeights, bml: bool) -> Result<(Tensor, LossValues)> {
    let ctx = model.encode(p, &item.image)?;
    let ltr = model.html.forward(p, &item.inputs, Direction::LtoR, &ctx.html)?;
    let mut v = LossValues::default();
    let html = if bml {
        let rtl = model.html.forward(p, &item.rtl_inputs, Direction::RtoL, &ctx.html)?;
        let parts = bml_loss(&ltr.token_logits, &rtl.token_logits, &item.targets, PAD, w.w_kl)?;
        v.ce_ltr = parts.ce_ltr.item();
        v.ce_rtl = parts.ce_rtl.item();
        v.kl_ltr = parts.kl_ltr.item();
        v.kl_rtl = parts.kl_rtl.item();
        parts.total
    } else {
        let ce = cross_entropy_masked(&ltr.token_logits, &item.targets, PAD)?;
        v.ce_ltr = ce.item();
        ce
    };
    let cell_logits = model.cell.forward(p, &item.cell_inputs, &ltr.hidden, &item.alignment, &ctx.cell)?;
    let cell = cross_entropy_masked(&cell_logits, &item.cell_targets, PAD)?;
    let bbox = bbox_loss(&ltr.bbox_pred, &item.bbox_targets, &item.bbox_mask)?;
    let parts = LossParts { html, cell, bbox };
    let total = total_loss(&parts, w)?;
    v.html = parts.html.item();
    v.cell = parts.cell.item();
    v.bbox = parts.bbox.item();
    v.total = total.item();
    Ok((total, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub schedule: ScheduleSpec,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub bml: bool,
    pub seed: u64,
    pub workers: usize,
    pub shuffle: bool,
    /// Write a checkpoint at the end of every epoch.
    pub checkpoint_every_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            max_steps: None,
            schedule: ScheduleSpec::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            bml: true,
            seed: 0,
            workers: 1,
            shuffle: true,
            checkpoint_every_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("epochs, batch_size and workers must be positive".into()));
        }
        self.schedule.validate()?;
        self.weights.validate()
    }

    /// Schedule stretched to the configured epoch count.
    pub fn effective_schedule(&self) -> ScheduleSpec {
        if self.schedule.total_epochs() == self.epochs {
            self.schedule.clone()
        } else {
            self.schedule.scaled_to(self.epochs)
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossValues,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs_completed: usize,
    pub records: Vec<StepRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where training artifacts go; `None` keeps everything in memory.
pub struct TrainOutput<'a> {
    pub dir: &'a Path,
    pub vocabs: &'a Vocabs,
}

fn batch_gradients(model: &Model, p: &ParamStore, batch: &[&TrainItem], cfg: &TrainConfig) -> Result<LossValues> {
    let scale = 1.0 / batch.len() as f64;
    let run = |item: &&TrainItem| -> Result<LossValues> {
        let (loss, v) = sample_loss(model, p, item, &cfg.weights, cfg.bml)?;
        loss.scale(scale).backward()?;
        Ok(v)
    };
    let values: Vec<LossValues> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| batch.par_iter().map(run).collect::<Result<_>>())?
    } else {
        batch.iter().map(run).collect::<Result<_>>()?
    };
    let mut mean = LossValues::default();
    for v in &values {
        mean.add_scaled(v, scale);
    }
    Ok(mean)
}

/// Runs the configured epochs over `items`, logging every step and
/// checkpointing every epoch when `out` is given. A non-finite loss or
/// gradient stops training with an error; checkpoints already written stay.
pub fn train(model: &Model, params: &mut ParamStore, items: &[TrainItem], cfg: &TrainConfig, out: Option<TrainOutput<'_>>) -> Result<TrainSummary> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let schedule = cfg.effective_schedule();
    let mut opt = Adam::new(params, cfg.adam);
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed_0f_7a);
    let mut log = match &out {
        Some(o) => {
            fs::create_dir_all(o.dir).map_err(Error::io(o.dir))?;
            let path = o.dir.join("train_log.jsonl");
            Some((BufWriter::new(File::create(&path).map_err(Error::io(&path))?), path))
        }
        None => None,
    };
    let start = Instant::now();
    let mut summary = TrainSummary {
        steps: 0,
        epochs_completed: 0,
        records: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut order: Vec<usize> = (0..items.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = lr_schedule(epoch, &schedule);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| summary.steps >= m) {
                break 'epochs;
            }
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            params.zero_grad();
            let losses = batch_gradients(model, params, &batch, cfg)?;
            opt.step(params, lr)?;
            let rec = StepRecord {
                epoch,
                step: summary.steps,
                lr,
                losses,
                wall_time: start.elapsed().as_secs_f64(),
            };
            if let Some((w, path)) = log.as_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(Error::io(path.as_path()))?;
            }
            log::debug!("epoch {epoch} step {} loss {:.5}", summary.steps, losses.total);
            summary.records.push(rec);
            summary.steps += 1;
        }
        summary.epochs_completed = epoch + 1;
        if let (Some(o), true) = (&out, cfg.checkpoint_every_epoch) {
            let dir = o.dir.join("checkpoints").join(format!("epoch_{:03}", epoch + 1));
            let mut extra = toml::Table::new();
            extra.insert("epoch".into(), toml::Value::Integer(epoch as i64 + 1));
            extra.insert("step".into(), toml::Value::Integer(summary.steps as i64));
            save_model(&dir, model, params, o.vocabs, extra)?;
            summary.checkpoints.push(dir);
        }
    }
    params.zero_grad();
    Ok(summary)
}

/// Ground-truth HTML of an annotated table, in the same wrapper the
/// recognizer emits.
pub fn ground_truth_html(sample: &TableSample) -> Result<String> {
    let structure = normalize_structure_tokens(&sample.structure_tokens)?;
    let cells: Vec<String> = sample.cell_tokens().iter().map(|c| c.concat()).collect();
    crate::model::assemble_html(&structure, &cells, false)
}

/// Recognizes every encoded sample and scores it against its annotation.
pub fn evaluate(
    model: &Model,
    p: &ParamStore,
    vocabs: &Vocabs,
    encoded: &[EncodedSample],
    samples: &[TableSample],
    workers: usize,
) -> Result<TedsReport> {
    let predict = |e: &EncodedSample| recognize(model, p, &e.image, vocabs).ok().map(|r| r.html);
    let preds: Vec<Option<String>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| encoded.par_iter().map(predict).collect())
    } else {
        encoded.iter().map(predict).collect()
    };
    let pairs = encoded
        .iter()
        .zip(preds)
        .map(|(e, pred)| {
            let gt = samples
                .iter()
                .find(|s| s.filename == e.filename)
                .ok_or_else(|| Error::Config(format!("no annotation for {}", e.filename)))?;
            Ok(EvalPair {
                filename: e.filename.clone(),
                pred,
                gt: ground_truth_html(gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    teds_batch_report(&pairs, workers)
}
