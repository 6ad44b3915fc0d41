use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::html::{parse_html_tree, TreeMode};
use super::ted::teds_score;
use crate::error::{Error, Result};
use crate::tokenizer::Complexity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub filename: String,
    pub complexity: Complexity,
    pub structural: f64,
    pub total: f64,
    /// No prediction was available; both scores are 0.
    pub missing: bool,
    /// Tag repairs needed to parse the prediction.
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMeans {
    pub count: usize,
    /// `None` for an empty bucket.
    pub structural: Option<f64>,
    pub total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub simple: BucketMeans,
    pub complex: BucketMeans,
    pub all: BucketMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TedsReport {
    pub per_sample: Vec<SampleScore>,
    pub aggregates: Aggregates,
}

/// One prediction/ground-truth pair; `pred = None` marks a missing prediction.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub filename: String,
    pub pred: Option<String>,
    pub gt: String,
}

fn gt_complexity(html: &str) -> Complexity {
    let lower = html.to_ascii_lowercase();
    if lower.contains("colspan") || lower.contains("rowspan") {
        Complexity::Complex
    } else {
        Complexity::Simple
    }
}

fn score_pair(pair: &EvalPair) -> Result<SampleScore> {
    let complexity = gt_complexity(&pair.gt);
    let gt_s = parse_html_tree(&pair.gt, TreeMode::Structural)
        .map_err(|e| Error::Parse(format!("ground truth {}: {e}", pair.filename)))?;
    let gt_t = parse_html_tree(&pair.gt, TreeMode::Total)
        .map_err(|e| Error::Parse(format!("ground truth {}: {e}", pair.filename)))?;
    let zero = |missing, repairs| SampleScore {
        filename: pair.filename.clone(),
        complexity,
        structural: 0.0,
        total: 0.0,
        missing,
        repairs,
    };
    let Some(pred) = &pair.pred else {
        return Ok(zero(true, 0));
    };
    let (Ok(ps), Ok(pt)) = (parse_html_tree(pred, TreeMode::Structural), parse_html_tree(pred, TreeMode::Total)) else {
        log::warn!("prediction for {} has no table; scored 0", pair.filename);
        return Ok(zero(false, 1));
    };
    Ok(SampleScore {
        filename: pair.filename.clone(),
        complexity,
        structural: teds_score(&ps, &gt_s),
        total: teds_score(&pt, &gt_t),
        missing: false,
        repairs: ps.repairs,
    })
}

fn bucket<'a>(scores: impl Iterator<Item = &'a SampleScore>) -> BucketMeans {
    let (mut n, mut s, mut t) = (0usize, 0.0, 0.0);
    for x in scores {
        n += 1;
        s += x.structural;
        t += x.total;
    }
    BucketMeans {
        count: n,
        structural: (n > 0).then(|| s / n as f64),
        total: (n > 0).then(|| t / n as f64),
    }
}

impl Aggregates {
    pub fn from_scores(scores: &[SampleScore]) -> Self {
        Aggregates {
            simple: bucket(scores.iter().filter(|s| s.complexity == Complexity::Simple)),
            complex: bucket(scores.iter().filter(|s| s.complexity == Complexity::Complex)),
            all: bucket(scores.iter()),
        }
    }
}

/// Scores every pair; `workers > 1` spreads the pairs over a thread pool.
/// Output order always follows input order.
pub fn teds_batch_report(pairs: &[EvalPair], workers: usize) -> Result<TedsReport> {
    let per_sample: Vec<SampleScore> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| pairs.par_iter().map(score_pair).collect::<Result<_>>())?
    } else {
        pairs.iter().map(score_pair).collect::<Result<_>>()?
    };
    let aggregates = Aggregates::from_scores(&per_sample);
    Ok(TedsReport {
        per_sample,
        aggregates,
    })
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map_or_else(|| "     -".to_string(), |x| format!("{:6.2}", 100.0 * x))
}

impl TedsReport {
    /// Plain-text summary table, scores in percent.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let missing = self.per_sample.iter().filter(|x| x.missing).count();
        writeln!(s, "{:<8} {:>6} {:>11} {:>7}", "bucket", "count", "structural", "total").unwrap();
        for (name, b) in [("simple", &self.aggregates.simple), ("complex", &self.aggregates.complex), ("all", &self.aggregates.all)] {
            writeln!(s, "{:<8} {:>6} {:>11} {:>7}", name, b.count, fmt_mean(b.structural), fmt_mean(b.total)).unwrap();
        }
        if missing > 0 {
            writeln!(s, "missing predictions: {missing}").unwrap();
        }
        s
    }
}
