//! `convgru`: gradient checks, synthetic data, shape traces, training,
//! evaluation, robustness sweeps and feature-map export.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "convgru", version, about = "Convolutional GRU action classifiers")]
struct Cli {
    /// Root under which outputs go when no --out is given.
    #[arg(long, global = true, env = "CONVGRU_OUT", default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference check of every kernel, ConvGRU layers and reduced models.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Print layer-by-layer shapes and parameter counts.
    TraceShapes(TraceArgs),
    /// Train from a JSON run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Accuracy under a perturbation at several levels.
    Robustness(RobustnessArgs),
    /// Export per-channel feature maps of one trial as PNG images.
    Featmaps(FeatmapsArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// motion (order-cued) or pose (pose-cued).
    #[arg(long, default_value = "motion")]
    pub mode: String,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    /// Side of the square frames in pixels.
    #[arg(long, default_value_t = 256)]
    pub res: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub participants: usize,
    /// Plant every start at this frame instead of drawing it.
    #[arg(long)]
    pub start: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long, default_value = "convgru2d")]
    pub arch: String,
    #[arg(long, default_value_t = 224)]
    pub input: usize,
    /// last_flat, mean_flat, last_avg or flat.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Divide every layer width by this.
    #[arg(long, default_value_t = 1)]
    pub width_divisor: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Refuse checkpoints of another architecture.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub scheme: u8,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// Directory for confusion.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// frame_rate, missing or position.
    #[arg(long)]
    pub kind: String,
    /// A range such as 1..5 or a list such as 0,2,4; all levels of the kind
    /// by default.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for robustness_<kind>.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeatmapsArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// Trial id, optionally prefixed by the participant (`s01/c3_t004`).
    #[arg(long)]
    pub trial: String,
    #[arg(long, default_value = "conv1")]
    pub layer: String,
    /// Clip frame indices; first, middle and last by default.
    #[arg(long, value_delimiter = ',')]
    pub frames: Option<Vec<usize>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let root = cli.out_root;
    match cli.command {
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a, &root),
        Command::TraceShapes(a) => commands::trace_shapes(&a),
        Command::Train(a) => commands::train(&a, &root),
        Command::Eval(a) => commands::eval(&a),
        Command::Robustness(a) => commands::robustness(&a),
        Command::Featmaps(a) => commands::featmaps(&a, &root),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
