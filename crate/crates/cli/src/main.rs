mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable holding the default parent directory for run outputs.
pub const OUT_DIR_ENV: &str = "LOSTER_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "loster", version, about = "Long-sequence time series clustering")]
struct Cli {
    /// Threads for matrix products. More than one may break bitwise reproducibility.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Suppress per-epoch progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain, initialize and jointly train both views; write labels and metrics.
    Cluster(ClusterArgs),
    /// Pretrain both views and seed their centroids; write a checkpoint.
    Pretrain(ClusterArgs),
    /// Compare two label files with the Rand index and NMI.
    Eval(EvalArgs),
    /// Write a synthetic sinusoid dataset in UCR layout.
    Synth(SynthArgs),
    /// Check analytic gradients of every loss against finite differences.
    Gradcheck(GradcheckArgs),
    /// Time joint-training epochs on a dataset.
    Bench(BenchArgs),
    /// Print every configuration key with its default value.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DelimiterArg {
    Tab,
    Comma,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Training partition, or the only file. Label first, then the values.
    #[arg(long)]
    data: PathBuf,
    /// Test partition, appended after the training rows.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DelimiterArg::Tab)]
    delimiter: DelimiterArg,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key = value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, e.g. `--set latent_dim=64`. May repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Number of clusters. Defaults to the number of classes in the data.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Output directory. Defaults to `$LOSTER_OUT_DIR/<dataset>-<command>-seed<seed>`,
    /// or `runs/...` when the variable is unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted labels: `index,label` CSV or one label per line.
    #[arg(long)]
    labels: PathBuf,
    /// Ground-truth labels in the same format.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Series per class.
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long = "len", default_value_t = 64)]
    length: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Phases are drawn from [0, phase_spread).
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    phase_spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output TSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long = "len", default_value_t = 12)]
    series_len: usize,
    #[arg(long, default_value_t = 6)]
    latent_dim: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step; the suite default when omitted.
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
    /// Corrupt the analytic gradient of this loss (negative control).
    #[arg(long)]
    fault: Option<String>,
    /// Hold every parameter constant; nothing is checked.
    #[arg(long)]
    freeze_all: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Joint-training epochs to time.
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Output directory for `bench.csv` and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command: usage problems exit with 2, runtime failures with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<loster::Error> for Failure {
    fn from(e: loster::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
