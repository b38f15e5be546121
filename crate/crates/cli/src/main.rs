//! `handgm`: synthetic data, clustering, kernel training, inference and scoring.

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "handgm", version, about = "Mixtures of tree graphical models over hand keypoint heatmaps")]
struct Cli {
    /// TOML file supplying values for any flag. Explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (annotations plus heatmaps).
    Synth(SynthArgs),
    /// Canonicalize ground-truth poses and fit shape clusters.
    Cluster(ClusterArgs),
    /// Build a pool from per-cluster displacement statistics.
    Init(InitArgs),
    /// Train the pool's kernels; prints the loss history as CSV.
    Train(TrainArgs),
    /// Predict keypoints for every sample.
    Infer(InferArgs),
    /// Score predictions with PCK over the box side.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    num_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of clusters L.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Noise added to the annotation-derived angles, degrees.
    #[arg(long)]
    angle_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Cluster model file.
    #[arg(long)]
    clusters: Option<PathBuf>,
    /// Kernel radius r; kernels are (2r+1) x (2r+1).
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Start from uniform kernels instead of displacement statistics.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    angle_noise: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Width of the target Gaussians, grid cells.
    #[arg(long)]
    target_sigma: Option<f64>,
    /// Keep the two directions of every edge mirror images of each other.
    #[arg(long)]
    tied: bool,
    /// Single-threaded gradient evaluation.
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    angle_noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV; defaults to the output path with `.loss.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightChoice {
    Refined,
    UnaryArgmax,
    GroundTruth,
    Uniform,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where the mixture weights come from.
    #[arg(long, value_enum)]
    weights: Option<WeightChoice>,
    #[arg(long)]
    angle_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    serial: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    UnaryArgmax,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also score a baseline on the same samples.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Comma-separated thresholds as fractions of the box side.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, config),
        Command::Cluster(a) => commands::cluster(a, config),
        Command::Init(a) => commands::init(a, config),
        Command::Train(a) => commands::train(a, config),
        Command::Infer(a) => commands::infer(a, config),
        Command::Eval(a) => commands::eval(a, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
