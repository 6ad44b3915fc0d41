use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mutabnet", version, about = "End-to-end table recognition: synthesize, train, infer, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic table dataset (images + JSON Lines annotations).
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Recognize table images with a trained checkpoint.
    Infer(InferArgs),
    /// Score predicted HTML against ground truth with TEDS.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Shared {
    /// TOML run configuration; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 keeps runs bit-reproducible).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Number of tables.
    #[arg(long)]
    pub n: Option<usize>,
    /// Maximum rows per table.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Maximum columns per table.
    #[arg(long)]
    pub cols: Option<usize>,
    /// Probability of attempting a merged cell at each grid position.
    #[arg(long)]
    pub merge_prob: Option<f64>,
    /// Minimum canvas side in pixels.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Dataset directory holding annotations.jsonl and images/.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Architecture preset: tiny or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Train the left-to-right direction only, without mutual learning.
    #[arg(long)]
    pub no_bml: bool,
    /// Structure decoder window; a comma list runs a sweep.
    #[arg(long, value_delimiter = ',')]
    pub html_window: Vec<usize>,
    /// Cell decoder window; a comma list runs a sweep.
    #[arg(long, value_delimiter = ',')]
    pub cell_window: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Checkpoint directory, or a training output directory with final/.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of PNG images, or a single image.
    #[arg(long)]
    pub images: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Directory of <stem>.html predictions, a results .jsonl, or a JSON
    /// object mapping filenames to HTML.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: annotations .jsonl, or a JSON object mapping filenames
    /// to {"html": ...}.
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}
