//! The `sgcn` command-line tool.
//!
//! Subcommands generate synthetic data, search an architecture, train and
//! evaluate the searched network, fuse score files and re-export
//! architectures. Every command writes only below its `--out-dir`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data, format or
//! I/O error, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod scores;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Errors classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sgcn_core::Error> for CliError {
    fn from(e: sgcn_core::Error) -> Self {
        use sgcn_core::Error as E;
        match e {
            E::Config(_) | E::Contract(_) => CliError::Usage(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Dimension(_) | E::Index(_) | E::Format { .. } | E::Data(_) | E::Io(_) | E::Json(_) => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sgcn", version, about = "Evolutionary GCN architecture search for skeleton action recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled skeleton dataset.
    Gendata(GendataArgs),
    /// Search an architecture with CEIM.
    Search(SearchArgs),
    /// Train a searched architecture.
    Train(TrainArgs),
    /// Evaluate a trained model on a dataset.
    Eval(EvalArgs),
    /// Average two score files and re-score.
    Fuse(FuseArgs),
    /// Re-finalize stored architecture weights at a threshold.
    ExportArch(ExportArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory receiving every output file.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Flags shared by commands that build networks. Flags override `--config`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Leading frames of each clip fed to the network.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Divide every block width by this factor.
    #[arg(long)]
    pub width_divisor: Option<usize>,
    /// `chebyshev` or `power`.
    #[arg(long)]
    pub cheb_basis: Option<String>,
    #[arg(long)]
    pub double_softmax: bool,
    /// Use bone vectors instead of joint positions.
    #[arg(long)]
    pub bones: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Comma-separated zero-based epochs at which the rate drops tenfold.
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub per_class: usize,
    #[arg(long)]
    pub joints: usize,
    /// Frames generated per clip before tiling to 300.
    #[arg(long, default_value_t = sgcn_core::data::FRAMES)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File name inside the output directory.
    #[arg(long, default_value = "data.skel")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    /// Reuse fitness of carried-over samples instead of re-evaluating.
    #[arg(long)]
    pub cache_fitness: bool,
    /// `sampled` or `mixed` weight training after warmup.
    #[arg(long)]
    pub train_activation: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Architecture JSON from `search` or `export-arch`.
    #[arg(long, required_unless_present = "resume")]
    pub arch: Option<PathBuf>,
    /// Scored after every epoch when given.
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write a checkpoint every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub bones: bool,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Prefix of the written file names.
    #[arg(long, default_value = "eval")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub scores_a: PathBuf,
    #[arg(long)]
    pub scores_b: PathBuf,
    /// Dataset providing labels for the fused metrics.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// `architecture.json` or `search_result.json`.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long, default_value_t = sgcn_core::net::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "architecture.json")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Cap rayon's worker count from `SGCN_THREADS`.
pub fn init_threads() {
    if let Some(n) = std::env::var("SGCN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sgcn: {e}");
            e.exit_code()
        }
    }
}
