use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mutabnet::data::load_jsonl_dataset;
use mutabnet::teds::{teds_batch_report, EvalPair};
use mutabnet::train::ground_truth_html;
use serde_json::Value;

use crate::args::EvalArgs;
use crate::config::RunConfig;

fn html_of(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Object(o) => o.get("html").and_then(Value::as_str).map(str::to_string),
        _ => None,
    }
}

/// `{filename: html}` or `{filename: {"html": ...}}`.
fn read_json_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let Value::Object(obj) = v else {
        bail!("{}: expected a JSON object keyed by filename", path.display());
    };
    obj.iter()
        .map(|(k, v)| Ok((k.clone(), html_of(v).with_context(|| format!("{}: no html for {k}", path.display()))?)))
        .collect()
}

/// JSON Lines with `filename` and `html` fields, as written by `infer`.
fn read_results(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let name = v.get("filename").and_then(Value::as_str).with_context(|| format!("{}:{}: no filename", path.display(), i + 1))?;
        if let Some(html) = html_of(&v) {
            out.insert(name.to_string(), html);
        }
    }
    Ok(out)
}

fn stem(name: &str) -> String {
    Path::new(name).file_stem().map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

enum Predictions {
    Dir(PathBuf),
    Map(BTreeMap<String, String>),
}

impl Predictions {
    fn open(path: &Path) -> Result<Self> {
        if path.is_dir() {
            return Ok(Predictions::Dir(path.to_path_buf()));
        }
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Ok(Predictions::Map(read_results(path)?)),
            Some("json") => Ok(Predictions::Map(read_json_map(path)?)),
            _ => bail!("{}: predictions must be a directory, .jsonl or .json file", path.display()),
        }
    }

    fn get(&self, filename: &str) -> Option<String> {
        match self {
            Predictions::Dir(d) => fs::read_to_string(d.join(format!("{}.html", stem(filename)))).ok(),
            Predictions::Map(m) => m.get(filename).cloned(),
        }
    }
}

fn ground_truth(path: &Path) -> Result<Vec<(String, String)>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(read_json_map(path)?.into_iter().collect()),
        _ => {
            let mut data = load_jsonl_dataset(path, None, 0)?;
            let mut out = Vec::new();
            for s in data.by_ref() {
                out.push((s.filename.clone(), ground_truth_html(&s)?));
            }
            if data.warnings() > 0 {
                log::warn!("{} ground-truth lines skipped", data.warnings());
            }
            Ok(out)
        }
    }
}

pub fn run(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(args.shared.config.as_deref())?;
    let workers = args.shared.workers.or(cfg.workers).unwrap_or(1);
    let preds = Predictions::open(&args.pred)?;
    let pairs: Vec<EvalPair> = ground_truth(&args.gt)?
        .into_iter()
        .map(|(filename, gt)| EvalPair {
            pred: preds.get(&filename),
            filename,
            gt,
        })
        .collect();
    if pairs.is_empty() {
        bail!("{}: no ground-truth tables", args.gt.display());
    }
    let report = teds_batch_report(&pairs, workers)?;
    print!("{}", report.render());
    let json_path = args.json.or_else(|| args.shared.out.map(|d| d.join("teds_report.json")));
    if let Some(path) = json_path {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
