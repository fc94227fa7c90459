use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use rmlab::losses::{BsrVariant, LossKind};

#[derive(Debug, Parser)]
#[command(
    name = "rmlab",
    version,
    about = "Train reward models on a synthetic gold-preference world and measure how they generalize."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a world and its datasets.
    GenWorld(GenWorldArgs),
    /// Train one reward model per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or the gold scorer, on a world's datasets.
    Eval(EvalArgs),
    /// Optimize a policy against a trained reward model with RLOO.
    Rloo(RlooArgs),
    /// Aggregate run directories into a summary table and charts.
    Report(ReportArgs),
    /// Run the full pipeline from one config file.
    Experiment(ExperimentArgs),
    /// Print the default experiment config as JSON.
    Defaults,
}

#[derive(Debug, Args)]
pub struct GenWorldArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub d_x: Option<usize>,
    #[arg(long)]
    pub d_y: Option<usize>,
    /// Training triplets (one per train prompt).
    #[arg(long)]
    pub train_size: Option<usize>,
    /// Groups per validation set (one per valid prompt).
    #[arg(long)]
    pub valid_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `gen-world`.
    #[arg(long)]
    pub world: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long, value_parser = parse_bsr_variant)]
    pub bsr_variant: Option<BsrVariant>,
    /// Run seed, or the first seed with `--seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train this many consecutive seeds into `seed-<n>` subdirectories.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Sets both the logging and evaluation interval.
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// A `train` run directory holding `rm.ckpt`.
    #[arg(long, conflicts_with_all = ["checkpoint", "gold"])]
    pub run: Option<PathBuf>,
    #[arg(long, conflicts_with = "gold")]
    pub checkpoint: Option<PathBuf>,
    /// Score with the world's gold reward instead of a checkpoint.
    #[arg(long)]
    pub gold: bool,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RlooArgs {
    #[arg(long)]
    pub world: PathBuf,
    /// A `train` run directory whose model is the proxy reward.
    #[arg(long, conflicts_with = "gold_proxy")]
    pub rm: Option<PathBuf>,
    /// Optimize the gold reward directly.
    #[arg(long)]
    pub gold_proxy: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fold the KL penalty into the reward (`true`) or add it as a loss term.
    #[arg(long)]
    pub kl_in_reward: Option<bool>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory scanned recursively for run outputs.
    #[arg(long)]
    pub dir: PathBuf,
    /// Summary file; defaults to `<dir>/summary.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG line charts next to the summary.
    #[arg(long)]
    pub charts: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse()
}

fn parse_bsr_variant(s: &str) -> Result<BsrVariant, String> {
    match s {
        "squared-mean" | "squared_mean" => Ok(BsrVariant::SquaredMean),
        "mean-of-squares" | "mean_of_squares" => Ok(BsrVariant::MeanOfSquares),
        _ => Err(format!("unknown BSR variant '{s}' (expected squared-mean or mean-of-squares)")),
    }
}
