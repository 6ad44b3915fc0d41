use std::fs;

use anyhow::{Context, Result};
use mutabnet::data::{synth_corpus, write_jsonl, TableSample};
use mutabnet::tokenizer::{classify_complexity, normalize_structure_tokens, Complexity};
use serde::Serialize;

use crate::args::SynthArgs;
use crate::config::{require_dir, RunConfig};

pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const IMAGES: &str = "images";

#[derive(Serialize)]
struct GeneratorRecord<'a> {
    n: usize,
    seed: u64,
    simple: usize,
    complex: usize,
    synth: &'a mutabnet::data::SynthConfig,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let cfg = RunConfig::load(args.shared.config.as_deref())?;
    let out = require_dir(args.shared.out, cfg.out.clone(), "out")?;
    let mut synth = cfg.synth.clone();
    synth.rows = args.rows.unwrap_or(synth.rows);
    synth.cols = args.cols.unwrap_or(synth.cols);
    synth.merge_prob = args.merge_prob.unwrap_or(synth.merge_prob);
    synth.image_size = args.image_size.unwrap_or(synth.image_size);
    let n = args.n.or(cfg.n).unwrap_or(100);
    let seed = args.shared.seed.or(cfg.seed).unwrap_or(0);

    let samples = synth_corpus(n, seed, &synth)?;
    let images = out.join(IMAGES);
    fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    let mut complex = 0;
    for s in &samples {
        let img = s.image.as_ref().context("generated sample without image")?;
        img.save_png(&images.join(&s.filename))?;
        if classify_complexity(&normalize_structure_tokens(&s.structure_tokens)?) == Complexity::Complex {
            complex += 1;
        }
    }
    let annotations: Vec<_> = samples.iter().map(TableSample::to_annotation).collect();
    write_jsonl(&out.join(ANNOTATIONS), &annotations)?;
    let record = GeneratorRecord {
        n,
        seed,
        simple: n - complex,
        complex,
        synth: &synth,
    };
    let path = out.join("generator.toml");
    fs::write(&path, toml::to_string_pretty(&record)?).with_context(|| format!("writing {}", path.display()))?;
    println!("generated {n} tables in {}: {} simple, {complex} complex", out.display(), n - complex);
    Ok(())
}
