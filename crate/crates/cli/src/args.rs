use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ogcp_core::loss::LossKind;
use ogcp_core::sampling::SampleCount;
use ogcp_core::solvers::{GradientMode, TemporalMode};

#[derive(Parser, Debug)]
#[command(name = "ogcp", version, about = "Streaming generalized CP tensor decomposition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Warm-start on the first slices, then stream the rest one slice at a time.
    Stream(Box<StreamArgs>),
    /// Fit a whole tensor at once.
    Static(Box<StaticArgs>),
    /// Generate a synthetic tensor and its planted model.
    Gen(GenArgs),
    /// Congruence between two K-tensor files.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LowerBound {
    #[value(name = "0")]
    Zero,
    #[value(name = "-inf")]
    NegInf,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// Input `.tns` file.
    pub input: PathBuf,
    /// Sum repeated coordinates instead of rejecting the file.
    #[arg(long)]
    pub merge_duplicates: bool,
    /// Replace every nonzero value by 1.
    #[arg(long)]
    pub binarize: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct LossArgs {
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    /// Shift inside the logarithms of the poisson and bernoulli losses.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Entry-wise lower bound for every ADAM step (default: from the loss).
    #[arg(long, value_enum, allow_hyphen_values = true)]
    pub lower_bound: Option<LowerBound>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SampleArgs {
    /// Nonzero samples for objective estimates (a count or `all`).
    #[arg(long)]
    pub fsamp_nz: Option<SampleCount>,
    /// Zero samples for objective estimates.
    #[arg(long)]
    pub fsamp_z: Option<usize>,
    /// Nonzero samples per gradient (a count or `all`).
    #[arg(long)]
    pub gsamp_nz: Option<SampleCount>,
    /// Zero samples per gradient.
    #[arg(long)]
    pub gsamp_z: Option<usize>,
    /// Rejection budget for zero sampling (default 1000 per requested zero).
    #[arg(long)]
    pub max_rejects: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AdamArgs {
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Learning-rate factor applied after a rejected epoch.
    #[arg(long)]
    pub rate_decay: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ExecArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for kernels (0 uses all cores).
    #[arg(long, env = "OGCP_THREADS")]
    pub threads: Option<usize>,
    /// One thread and zeroed wall times, so outputs are bitwise repeatable.
    #[arg(long)]
    pub deterministic: bool,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    pub show_config: bool,
}

#[derive(Args, Debug, Clone)]
pub struct StreamArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Start from a named hyperparameter set; explicit flags override it.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
    #[command(flatten)]
    pub adam: AdamArgs,
    /// ADAM rate of the temporal-weight solver.
    #[arg(long)]
    pub rate_w: Option<f64>,
    /// ADAM rate of the factor solver.
    #[arg(long)]
    pub rate_f: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tol_w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tol_f: Option<f64>,
    #[arg(long)]
    pub epochs_w: Option<usize>,
    #[arg(long)]
    pub epochs_f: Option<usize>,
    #[arg(long)]
    pub iters_w: Option<usize>,
    #[arg(long)]
    pub iters_f: Option<usize>,
    /// Factor regularization λ.
    #[arg(long)]
    pub reg_factors: Option<f64>,
    /// Temporal-weight regularization μ.
    #[arg(long)]
    pub reg_weights: Option<f64>,
    /// History multiplier w.
    #[arg(long)]
    pub hist_weight: Option<f64>,
    /// History decay θ.
    #[arg(long)]
    pub hist_decay: Option<f64>,
    /// History window capacity H.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_parser = parse_temporal)]
    pub temporal_solver: Option<TemporalMode>,
    #[arg(long, value_parser = parse_gradient)]
    pub gradient: Option<GradientMode>,
    /// Start each temporal solve from the previous slice's weights.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub warm_weights: Option<bool>,
    /// Slices fitted jointly before streaming starts (0 skips the warm start).
    #[arg(long)]
    pub warm_slices: Option<usize>,
    #[arg(long)]
    pub warm_epochs: Option<usize>,
    #[arg(long)]
    pub warm_iters: Option<usize>,
    #[arg(long)]
    pub warm_rate: Option<f64>,
    /// Stream at most this many slices after the warm start.
    #[arg(long)]
    pub slices: Option<usize>,
    /// Also compute the exact local loss of every slice.
    #[arg(long)]
    pub exact_loss: bool,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Directory for metrics.csv, model.ktns and other outputs.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Reference K-tensor for congruence reports.
    #[arg(long)]
    pub score_against: Option<PathBuf>,
    /// Report congruence every n streamed slices (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub score_every: usize,
    /// Save the stream state every n slices.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Checkpoint path (default: <out-dir>/checkpoint.json).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write plot_metrics.py next to metrics.csv.
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(Args, Debug, Clone)]
pub struct StaticArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub rank: usize,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub samples: SampleArgs,
    #[command(flatten)]
    pub adam: AdamArgs,
    #[arg(long, default_value_t = 1e-2)]
    pub rate: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub reg_factors: f64,
    #[arg(long, default_value_t = 0.0)]
    pub reg_weights: f64,
    /// Initial model instead of a random start.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub exec: ExecArgs,
    /// Output K-tensor file.
    #[arg(long, default_value = "model.ktns")]
    pub out: PathBuf,
    #[arg(long)]
    pub score_against: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Gaussian,
    Poisson,
}

#[derive(Args, Debug, Clone)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    /// Comma-separated dimensions, e.g. 50,50,100.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub rank: usize,
    /// Noise standard deviation (gaussian).
    #[arg(long, default_value_t = 0.2)]
    pub noise: f64,
    /// Target nonzero fraction (poisson).
    #[arg(long, default_value_t = 0.032)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest dense tensor to generate, in cells.
    #[arg(long)]
    pub max_entries: Option<u64>,
    /// Output `.tns` file.
    #[arg(long)]
    pub out: PathBuf,
    /// Output file for the planted K-tensor.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreArgs {
    pub first: PathBuf,
    pub second: PathBuf,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse()
}

fn parse_temporal(s: &str) -> Result<TemporalMode, String> {
    s.parse()
}

fn parse_gradient(s: &str) -> Result<GradientMode, String> {
    s.parse()
}
