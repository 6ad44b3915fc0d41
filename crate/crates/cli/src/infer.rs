use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mutabnet::data::{denormalize_bbox, preprocess_image, standardize, GrayImage};
use mutabnet::model::{load_model, recognize, LoadedModel};
use mutabnet_autodiff::io::MANIFEST_FILE;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::InferArgs;
use crate::config::{require_dir, RunConfig};

#[derive(Debug, Serialize)]
struct CellResult {
    content: String,
    bbox: [f64; 4],
}

#[derive(Debug, Serialize)]
struct ImageResult {
    filename: String,
    html: String,
    finished: bool,
    cells: Vec<CellResult>,
}

fn resolve_checkpoint(path: &Path) -> PathBuf {
    if !path.join(MANIFEST_FILE).exists() && path.join("final").join(MANIFEST_FILE).exists() {
        path.join("final")
    } else {
        path.to_path_buf()
    }
}

fn list_images(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn infer_one(m: &LoadedModel, standardize_input: bool, path: &Path) -> Result<ImageResult> {
    let img = GrayImage::load(path)?;
    let (mut pre, record) = preprocess_image(&img, m.model.config.image_size)?;
    if standardize_input {
        standardize(&mut pre);
    }
    let r = recognize(&m.model, &m.params, &pre.to_tensor(), &m.vocabs)?;
    let cells = r
        .cells
        .into_iter()
        .zip(r.bboxes)
        .map(|(content, b)| CellResult {
            content,
            bbox: denormalize_bbox(b, &record),
        })
        .collect();
    Ok(ImageResult {
        filename: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        html: r.html,
        finished: r.finished,
        cells,
    })
}

/// Returns the number of images that could not be processed.
pub fn run(args: InferArgs) -> Result<usize> {
    let cfg = RunConfig::load(args.shared.config.as_deref())?;
    let out = require_dir(args.shared.out, cfg.out, "out")?;
    let workers = args.shared.workers.or(cfg.workers).unwrap_or(1);
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let loaded = load_model(&resolve_checkpoint(&args.checkpoint))?;
    let standardize_input = loaded.meta.get("standardize").and_then(toml::Value::as_bool).unwrap_or(false);
    let images = list_images(&args.images)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let work = |p: &PathBuf| (p.clone(), infer_one(&loaded, standardize_input, p));
    let results: Vec<(PathBuf, Result<ImageResult>)> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        pool.install(|| images.par_iter().map(work).collect())
    } else {
        images.iter().map(work).collect()
    };

    let mut lines = String::new();
    let mut failures = Vec::new();
    for (path, r) in results {
        match r {
            Ok(r) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let html_path = out.join(format!("{stem}.html"));
                fs::write(&html_path, &r.html).with_context(|| format!("writing {}", html_path.display()))?;
                lines.push_str(&serde_json::to_string(&r)?);
                lines.push('\n');
            }
            Err(e) => failures.push(format!("{}: {e:#}", path.display())),
        }
    }
    fs::write(out.join("results.jsonl"), lines).context("writing results.jsonl")?;
    println!("recognized {} of {} images into {}", images.len() - failures.len(), images.len(), out.display());
    if !failures.is_empty() {
        let text = failures.join("\n") + "\n";
        fs::write(out.join("failures.txt"), &text).context("writing failures.txt")?;
        eprintln!("failures:\n{text}");
    }
    Ok(failures.len())
}
