//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "rocr",
    about = "Concept redirection for small decoder-only transformers",
    version
)]
pub struct Cli {
    /// Emit machine-readable errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Accumulate preserved-key statistics from a corpus.
    Covariance(CovarianceArgs),
    /// Apply a concept-redirection edit and write a new model directory.
    Edit(EditArgs),
    /// Score a task file and write an evaluation report.
    Eval(EvalArgs),
    /// Relative per-cell change between two reports.
    Compare(CompareArgs),
    /// Edit one layer at a time and report per-layer changes.
    Sweep(SweepArgs),
    /// Materialize the bundled fixture models and data files.
    Fixtures(FixturesArgs),
}

#[derive(Debug, Args)]
pub struct CovarianceArgs {
    /// Model directory (resolved against $ROCR_MODEL_ROOT if relative).
    #[arg(long)]
    pub model: PathBuf,
    /// UTF-8 corpus, one document per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Output directory for layer_{l}.cov files.
    #[arg(long)]
    pub out: PathBuf,
    /// Cap on sampled token positions.
    #[arg(long, default_value_t = 100_000)]
    pub max_keys: usize,
}

#[derive(Debug, Args, Clone)]
pub struct EditFlags {
    /// Word whose concept is redirected away.
    #[arg(long)]
    pub forget: Option<String>,
    /// semantic | noise | reject
    #[arg(long)]
    pub variant: Option<String>,
    /// Redirection target word (semantic variant).
    #[arg(long)]
    pub target: Option<String>,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Probe template file, one `{w}` sentence per line.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Directory containing layer_{l}.cov files.
    #[arg(long)]
    pub cov_dir: Option<PathBuf>,
    /// Relative eigenvalue threshold for the null projector.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Weight of the update-norm penalty.
    #[arg(long)]
    pub ridge_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probe all layers once from the pristine model instead of reprobing.
    #[arg(long)]
    pub no_reprobe: bool,
    /// Skip the model's prompt template during probing and rejection.
    #[arg(long)]
    pub no_probe_template: bool,
    /// Rejection response text (reject variant).
    #[arg(long)]
    pub reject_text: Option<String>,
    /// Rejection optimizer steps.
    #[arg(long)]
    pub reject_steps: Option<usize>,
    /// Rejection optimizer learning rate.
    #[arg(long)]
    pub reject_lr: Option<f64>,
    /// Prompt file for the rejection optimizer (`{w}` per line).
    #[arg(long)]
    pub reject_prompts: Option<PathBuf>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Output model directory (the input is never mutated).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: EditFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON Lines task file.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Report output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the model's prompt template.
    #[arg(long)]
    pub no_template: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    /// Optional JSON output of the per-cell changes.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    /// Layers to sweep, one edit per layer.
    #[arg(long, value_delimiter = ',')]
    pub sweep_layers: Vec<usize>,
    /// Optional JSON output of the sweep table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_template: bool,
    #[command(flatten)]
    pub flags: EditFlags,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    /// Directory to materialize fixtures into.
    #[arg(long)]
    pub out: PathBuf,
}
