//! `rfkit`: train, tune, evaluate and combine random-feature kernel
//! classifiers.
//!
//! Results go to stdout as CSV; progress goes to stderr as `key=value`
//! lines, with per-epoch history lines prefixed `metric=`. Exit codes: 0 on
//! success, 1 for usage errors, 2 for I/O and format errors, 3 for numeric
//! failures.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use rfkit::{ErrorCategory, VisitOrder, DEFAULT_PAIR_BUDGET};

mod commands;
mod config;
mod kernel;

#[derive(Parser, Debug)]
#[command(
    name = "rfkit",
    version,
    about = "Random Fourier feature kernel classifiers"
)]
pub struct Cli {
    /// Flat `key = value` file of default flags.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a block ensemble and report its metrics.
    Train(TrainCmd),
    /// Rank step sizes and bandwidth multipliers by held-out perplexity.
    Tune(TuneCmd),
    /// Score a model or a logit file against labelled data.
    Eval(EvalCmd),
    /// Write logits or posteriors of a model.
    Predict(PredictCmd),
    /// Combine the logits of several models.
    Combine(CombineCmd),
    /// Train a two-stage composite kernel model.
    Compose(ComposeCmd),
    /// Convert datasets between formats, including IDX image files.
    Convert(ConvertCmd),
}

const SUBCOMMANDS: &[&str] = &[
    "train", "tune", "eval", "predict", "combine", "compose", "convert",
];

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Input format: csv, svmlight or dense_binary [default: from extension].
    #[arg(long)]
    pub format: Option<String>,

    /// Divide 8-bit pixel values by 256 (skipped for data already scaled).
    #[arg(long)]
    pub scale: bool,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training data.
    #[arg(long, value_name = "PATH")]
    pub train: PathBuf,

    /// Test data, scored after training.
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,

    #[command(flatten)]
    pub input: InputArgs,

    /// Fraction of the training data held out for model selection.
    #[arg(long, default_value_t = 0.1)]
    pub heldout_frac: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct KernelArgs {
    /// rbf, laplacian, product:<terms> or additive:<terms>; a term is
    /// `kind[@bandwidth][=weight]`.
    #[arg(long, default_value = "rbf")]
    pub kernel: String,

    /// <float>, `median` or `medianx<m>`.
    #[arg(long, default_value = "median")]
    pub bandwidth: String,

    /// Most point pairs examined by the median heuristic.
    #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
    pub pair_budget: usize,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.1)]
    pub step_size: f64,

    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 1)]
    pub minibatch: usize,

    /// Epochs without held-out improvement before stopping; 0 never stops.
    #[arg(long, default_value_t = 3)]
    pub patience: usize,

    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,

    /// Sample order within an epoch: permutation or uniform (with replacement).
    #[arg(long, default_value = "permutation")]
    pub visit_order: VisitOrder,
}

#[derive(Args, Debug, Clone)]
pub struct BudgetArgs {
    /// Total number of random features.
    #[arg(long, default_value_t = 2000)]
    pub features: usize,

    /// Features per block [default: all in one block].
    #[arg(long)]
    pub block_size: Option<usize>,

    /// none, mask:<rate> or gauss:<std>.
    #[arg(long, default_value = "none")]
    pub augment: String,
}

#[derive(Args, Debug)]
pub struct TrainCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,

    /// Where to save the trained ensemble.
    #[arg(long, value_name = "PATH", required_unless_present = "dry_run")]
    pub out: Option<PathBuf>,

    /// Write per-block training history as CSV.
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,

    /// Store projection seeds instead of projection matrices.
    #[arg(long)]
    pub seed_only_banks: bool,

    /// Print the resolved plan and stop.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct TuneCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,

    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001,0.01,0.1")]
    pub step_sizes: Vec<f64>,

    /// Factors applied to the bandwidth.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    pub multipliers: Vec<f64>,

    /// Also write the leaderboard here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args, Debug)]
pub struct EvalCmd {
    /// Saved ensemble.
    #[arg(long, value_name = "PATH", required_unless_present = "logits")]
    pub model: Option<PathBuf>,

    /// Logit file to score instead of running a model. Class indices follow
    /// the label order of `--model` when given, else first appearance in
    /// `--data`.
    #[arg(long, value_name = "PATH")]
    pub logits: Option<PathBuf>,

    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Args, Debug)]
pub struct PredictCmd {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Write posteriors as CSV instead of a binary logit file.
    #[arg(long)]
    pub posteriors: bool,
}

#[derive(Args, Debug)]
pub struct CombineCmd {
    /// Two or more logit files, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub logits: Vec<PathBuf>,

    /// Labelled data the logits were computed on.
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,

    #[command(flatten)]
    pub input: InputArgs,

    /// Ensemble whose label order the logits follow.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,

    /// Fixed weights, one per logit file; skips the search.
    #[arg(long, value_delimiter = ',', conflicts_with = "learn")]
    pub weights: Option<Vec<f64>>,

    /// Fit scalings by gradient descent instead of scanning a grid.
    #[arg(long)]
    pub learn: bool,

    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,

    /// accuracy or perplexity.
    #[arg(long, default_value = "accuracy")]
    pub objective: String,

    /// Write the combined logits here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ComposeCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,

    #[arg(long, default_value = "rbf")]
    pub stage1_kernel: String,

    #[arg(long, default_value = "median")]
    pub stage1_bandwidth: String,

    #[arg(long, default_value_t = 2000)]
    pub stage1_features: usize,

    /// pca_features or pca_logposteriors.
    #[arg(long, default_value = "pca_features")]
    pub mode: String,

    /// Bottleneck width [default: min(source width, 100)].
    #[arg(long)]
    pub target_dim: Option<usize>,

    #[arg(long, default_value = "rbf")]
    pub stage2_kernel: String,

    #[arg(long, default_value = "median")]
    pub stage2_bandwidth: String,

    #[arg(long, default_value_t = 2000)]
    pub stage2_features: usize,

    #[arg(long, default_value_t = DEFAULT_PAIR_BUDGET)]
    pub pair_budget: usize,

    /// Where to save the composite model.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConvertCmd {
    /// Dataset to convert.
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "images",
        conflicts_with = "images"
    )]
    pub input: Option<PathBuf>,

    /// IDX image file (with `--labels`).
    #[arg(long, value_name = "PATH", requires = "labels")]
    pub images: Option<PathBuf>,

    /// IDX label file.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,

    /// Keep only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,

    #[command(flatten)]
    pub read: InputArgs,

    /// Output format: csv, svmlight or dense_binary.
    #[arg(long)]
    pub to: String,

    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

fn parse_cli(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let matches = cmd.try_get_matches_from_mut(args)?;
    Cli::from_arg_matches(&matches).map_err(|e| e.format(&mut cmd))
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect(), SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(e.category()));
        }
    };
    let cli = match parse_cli(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is set up once");
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
