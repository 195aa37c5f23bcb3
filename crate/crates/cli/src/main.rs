//! `hdm`: dataset generation, training, evaluation, inference and gradient
//! verification from the command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 numerical divergence.

mod commands;
mod config;
mod manifest;
mod surface_io;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "HDM_NUM_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable inputs or inconsistent configuration.
    Usage(String),
    /// A check ran and did not pass.
    Verification(String),
    Divergence(String),
    /// Anything else that stopped the command.
    Failure(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Usage(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Verification(_) | Self::Failure(_) => 1,
            Self::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "{m}"),
            Self::Verification(m) => write!(f, "verification failed: {m}"),
            Self::Divergence(m) => write!(f, "training diverged: {m}"),
            Self::Failure(m) => write!(f, "{m}"),
        }
    }
}

impl From<hdm_core::Error> for CliError {
    fn from(err: hdm_core::Error) -> Self {
        use hdm_core::Error as E;
        let msg = err.to_string();
        match err {
            E::Divergence { .. } => Self::Divergence(msg),
            E::Config(_)
            | E::ConfigMismatch(_)
            | E::Parameter(_)
            | E::Dimension(_)
            | E::Format(_)
            | E::Io(_)
            | E::Serde(_) => Self::Usage(msg),
            _ => Self::Failure(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hdm", version, about = "Monocular non-rigid surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic deformation dataset into an HDMD container.
    Generate(GenerateArgs),
    /// Train a model on the train split of a dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Reconstruct the surface seen in one image.
    Infer(InferArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// TOML run configuration; only `[scene]` is read.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of deformation states.
    #[arg(long)]
    pub states: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; history CSV and manifest are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Enabled loss terms, e.g. `3d,iso,cont`.
    #[arg(long)]
    pub losses: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Shuffling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Evaluate the test split every this many epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlignmentArg {
    None,
    Rigid,
    Similarity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub alignment: Option<AlignmentArg>,
    /// Comma-separated salt-and-pepper fractions, ascending.
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<f64>>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Report CSV; the noise sweep goes to `<stem>.noise.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["image", "data"])))]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Binary PPM or raw RGB8 image.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, requires = "index")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    /// HDMS surface output.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the surface as Wavefront OBJ.
    #[arg(long)]
    pub obj: Option<PathBuf>,
    /// Also write the soft contour raster of the projection as PGM.
    #[arg(long)]
    pub raster: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["op", "all"])))]
pub struct GradcheckArgs {
    #[arg(long)]
    pub op: Vec<String>,
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failure(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
