use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fewshot_core::experiment::TrainStrategy;
use fewshot_core::trainer::CvMode;

#[derive(Debug, Parser)]
#[command(name = "fewshot", version, about = "Few-shot reading-ability score prediction from eye-tracking features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic subject × test dataset as CSV.
    Synth(SynthArgs),
    /// Split, train, evaluate; writes a checkpoint plus metrics and plot data.
    Train(TrainArgs),
    /// Baselines against a trained checkpoint, as one comparison table.
    Compare(CompareArgs),
    /// Shapley feature impacts of a trained checkpoint.
    Impact(ImpactArgs),
    /// Train and evaluate once per episode size.
    SweepK(SweepArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML file with any of the flags (snake_case keys); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to $FEWSHOT_OUT_DIR, then ./fewshot-out.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CvModeArg {
    Na,
    Semi,
    Full,
}

impl From<CvModeArg> for CvMode {
    fn from(v: CvModeArg) -> Self {
        match v {
            CvModeArg::Na => CvMode::Na,
            CvModeArg::Semi => CvMode::Semi,
            CvModeArg::Full => CvMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Episodic,
    Traditional,
}

impl From<StrategyArg> for TrainStrategy {
    fn from(v: StrategyArg) -> Self {
        match v {
            StrategyArg::Episodic => TrainStrategy::Episodic,
            StrategyArg::Traditional => TrainStrategy::Traditional,
        }
    }
}

fn feature_dim(s: &str) -> Result<usize, String> {
    match s {
        "19" => Ok(19),
        "22" => Ok(22),
        _ => Err(format!("{s} is not supported (19 or 22)")),
    }
}

/// Flags shared by every command that reads a dataset and trains.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fraction of subjects used for training.
    #[arg(long)]
    pub r: Option<f64>,
    /// Subjects per episode.
    #[arg(long)]
    pub k: Option<usize>,
    /// Stacked estimator layers.
    #[arg(long = "l")]
    pub l: Option<usize>,
    /// LSTM hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Use the 19 base features or all 22.
    #[arg(long, value_parser = feature_dim)]
    pub features: Option<usize>,
    #[arg(long, value_enum)]
    pub cv_mode: Option<CvModeArg>,
    #[arg(long, value_enum)]
    pub train_strategy: Option<StrategyArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub tests: Option<usize>,
    #[arg(long, value_parser = feature_dim)]
    pub features: Option<usize>,
    /// Scale of every unobserved noise source.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Weight of the squared-ability term.
    #[arg(long)]
    pub nonlinearity: Option<f64>,
    /// Size of the subject blocks that share group noise; enables the
    /// group-structured variant.
    #[arg(long)]
    pub group_block: Option<usize>,
    #[arg(long)]
    pub group_strength: Option<f64>,
    /// File name inside the output directory.
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ImpactArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Permutations per evaluation point.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub run: RunFlags,
    /// Comma-separated episode sizes.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
}
