use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mutabnet::data::{encode_sample, load_jsonl_dataset, EncodedSample, SeqLimits, TableSample, Vocabs};
use mutabnet::model::{save_model, Model, ModelConfig, Preset};
use mutabnet::teds::TedsReport;
use mutabnet::train::{evaluate, train, TrainConfig, TrainItem, TrainOutput};
use serde::Serialize;

use crate::args::TrainArgs;
use crate::config::{require_dir, RunConfig};
use crate::synth::{ANNOTATIONS, IMAGES};

/// Annotated samples of a dataset directory with their images loaded.
pub fn load_dataset(dir: &Path) -> Result<Vec<TableSample>> {
    let path = dir.join(ANNOTATIONS);
    let mut data = load_jsonl_dataset(&path, None, 0)?;
    let images = dir.join(IMAGES);
    let mut samples = Vec::new();
    for mut s in data.by_ref() {
        s.load_image(&images)?;
        samples.push(s);
    }
    if data.warnings() > 0 {
        log::warn!("{}: {} annotation lines skipped", path.display(), data.warnings());
    }
    if samples.is_empty() {
        bail!("{}: no usable samples", path.display());
    }
    Ok(samples)
}

struct Prepared {
    samples: Vec<TableSample>,
    vocabs: Vocabs,
}

struct RunSettings {
    model: ModelConfig,
    train: TrainConfig,
    standardize: bool,
    workers: usize,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    html_window: usize,
    cell_window: usize,
    steps: usize,
    final_loss: f64,
    structural: Option<f64>,
    total: Option<f64>,
    simple_total: Option<f64>,
    complex_total: Option<f64>,
}

struct RunResult {
    report: TedsReport,
    steps: usize,
    final_loss: f64,
}

fn run_once(data: &Prepared, s: &RunSettings, out: &Path) -> Result<RunResult> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let encoded: Vec<EncodedSample> = data
        .samples
        .iter()
        .map(|x| encode_sample(x, &data.vocabs, s.model.image_size, s.standardize))
        .collect::<mutabnet::Result<_>>()?;
    let limits = SeqLimits {
        max_structure_len: s.model.max_structure_len,
        max_cell_len: s.model.max_cell_len,
    };
    let items = TrainItem::from_samples(&encoded, limits);
    if items.len() < encoded.len() {
        log::warn!("{} of {} samples exceed the length caps and are not trained on", encoded.len() - items.len(), encoded.len());
    }
    let (model, mut params) = Model::new(s.model.clone(), s.train.seed)?;
    log::info!("model with {} parameters, {} training samples", params.num_scalars(), items.len());
    let summary = train(
        &model,
        &mut params,
        &items,
        &s.train,
        Some(TrainOutput {
            dir: out,
            vocabs: &data.vocabs,
        }),
    )?;
    let mut extra = toml::Table::new();
    extra.insert("standardize".into(), toml::Value::Boolean(s.standardize));
    extra.insert("step".into(), toml::Value::Integer(summary.steps as i64));
    save_model(&out.join("final"), &model, &params, &data.vocabs, extra)?;
    let report = evaluate(&model, &params, &data.vocabs, &encoded, &data.samples, s.workers)?;
    fs::write(out.join("train_eval.json"), serde_json::to_string_pretty(&report)?).context("writing train_eval.json")?;
    let final_loss = summary.records.last().map_or(f64::NAN, |r| r.losses.total);
    Ok(RunResult {
        report,
        steps: summary.steps,
        final_loss,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x))
}

fn render_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{:>11} {:>11} {:>6} {:>11} {:>8} {:>8} {:>8}", "html_window", "cell_window", "steps", "structural", "total", "simple", "complex").unwrap();
    for r in rows {
        writeln!(
            s,
            "{:>11} {:>11} {:>6} {:>11} {:>8} {:>8} {:>8}",
            r.html_window,
            r.cell_window,
            r.steps,
            pct(r.structural),
            pct(r.total),
            pct(r.simple_total),
            pct(r.complex_total)
        )
        .unwrap();
    }
    s
}

pub fn run(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.shared.config.as_deref())?;
    let data_dir = require_dir(args.data.clone(), cfg.data.clone(), "data")?;
    let out = require_dir(args.shared.out.clone(), cfg.out.clone(), "out")?;
    let preset = match &args.preset {
        Some(p) => p.parse::<Preset>()?,
        None => cfg.preset.unwrap_or(Preset::Tiny),
    };
    let seed = args.shared.seed.or(cfg.seed).unwrap_or(0);
    let workers = args.shared.workers.or(cfg.workers).unwrap_or(1);
    if workers == 0 {
        bail!("--workers must be at least 1");
    }

    let samples = load_dataset(&data_dir)?;
    let vocabs = Vocabs::build(&samples, Vec::new())?;
    let mut model = ModelConfig::preset(preset, vocabs.structure.len(), vocabs.cells.len());
    cfg.model.apply(&mut model);

    let mut tc = cfg.train.clone();
    tc.epochs = args.epochs.unwrap_or(tc.epochs);
    tc.batch_size = args.batch_size.unwrap_or(tc.batch_size);
    tc.max_steps = args.max_steps.or(tc.max_steps);
    tc.bml = tc.bml && !args.no_bml;
    tc.seed = seed;
    tc.workers = workers;
    tc.validate()?;

    // Echo the effective settings for provenance.
    cfg.seed = Some(seed);
    cfg.workers = Some(workers);
    cfg.preset = Some(preset);
    cfg.data = Some(data_dir.clone());
    cfg.out = Some(out.clone());
    cfg.train = tc.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write(&out.join("run_config.toml"))?;

    let html_windows = if args.html_window.is_empty() { vec![model.html_window] } else { args.html_window.clone() };
    let cell_windows = if args.cell_window.is_empty() { vec![model.cell_window] } else { args.cell_window.clone() };
    let prepared = Prepared { samples, vocabs };
    let sweep = html_windows.len() > 1 || cell_windows.len() > 1;

    let mut rows = Vec::new();
    for &h in &html_windows {
        for &c in &cell_windows {
            let mut m = model.clone();
            m.html_window = h;
            m.cell_window = c;
            m.validate()?;
            let settings = RunSettings {
                model: m,
                train: tc.clone(),
                standardize: cfg.standardize,
                workers,
            };
            let dir: PathBuf = if sweep { out.join(format!("window_h{h}_c{c}")) } else { out.clone() };
            let r = run_once(&prepared, &settings, &dir)?;
            if !sweep {
                println!("trained {} steps, final loss {:.6}", r.steps, r.final_loss);
                print!("{}", r.report.render());
                return Ok(());
            }
            let a = &r.report.aggregates;
            rows.push(SweepRow {
                html_window: h,
                cell_window: c,
                steps: r.steps,
                final_loss: r.final_loss,
                structural: a.all.structural,
                total: a.all.total,
                simple_total: a.simple.total,
                complex_total: a.complex.total,
            });
        }
    }
    let text = render_sweep(&rows);
    fs::write(out.join("window_sweep.txt"), &text).context("writing window_sweep.txt")?;
    fs::write(out.join("window_sweep.json"), serde_json::to_string_pretty(&rows)?).context("writing window_sweep.json")?;
    print!("{text}");
    Ok(())
}
