//! `dsaga`: experiment runner for SAGA, distributed SAGA and the full-gradient baselines.

mod commands;
mod config;
mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dsaga", version, about = "SAGA / distributed SAGA experiments", args_override_self = true)]
pub struct Cli {
    /// key=value file of flags; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one algorithm and write its trace.
    Run(RunArgs),
    /// Check the quadratic contraction bound or the Wishart limits.
    Verify(VerifyArgs),
    /// Run dSAGA for several values of K or U and merge the traces.
    Sweep(SweepArgs),
    /// Print the reference optimum of an objective.
    Optimum(OptimumArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Saga,
    Dsaga,
    Gd,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveKind {
    Logistic,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SyncGrad {
    /// Average of stored gradients.
    Stored,
    /// Exact gradient at the node's end point (one extra pass).
    Exact,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LIBSVM file.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Feature dimension for LIBSVM input (default: largest index seen).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Synthetic data, e.g. gaussian:n=1000,d=20[,noise=0.5,seed=0,diag=1;2;..]
    #[arg(long, value_name = "SPEC")]
    pub synthetic: Option<String>,
    #[arg(long, value_enum, default_value_t = ObjectiveKind::Logistic)]
    pub objective: ObjectiveKind,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Args)]
pub struct AlgoArgs {
    /// Nodes.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Local passes between synchronisations.
    #[arg(long, default_value_t = 1)]
    pub u: usize,
    /// Synchronisation rounds (dsaga).
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    /// Passes (saga), steps (gd) or iteration cap (lbfgs).
    #[arg(long, default_value_t = 10)]
    pub passes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step size; default 1/(3L) for SAGA and 1/L for gradient descent.
    #[arg(long)]
    pub step: Option<f64>,
    /// Solve each dSAGA inner problem exactly (quadratic objective only).
    #[arg(long)]
    pub exact_inner: bool,
    /// Start from one pass of SGD.
    #[arg(long)]
    pub warmstart: bool,
    /// Keep stored gradients across rounds instead of resetting them at the round start.
    #[arg(long)]
    pub no_refresh: bool,
    #[arg(long, value_enum, default_value_t = SyncGrad::Stored)]
    pub sync_grad: SyncGrad,
    /// Gradient-norm tolerance (lbfgs).
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Correction pairs kept by L-BFGS.
    #[arg(long, default_value_t = 10)]
    pub memory: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub algo_args: AlgoArgs,
    /// Trace CSV (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Rate-report CSV (dsaga only); also adds per-pass rows to the trace.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    K,
    U,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub algo_args: AlgoArgs,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Lemma {
    /// Contraction of exact-inner-solve rounds on a quadratic.
    Lemma1,
    /// Wishart norm, inverse trace and pairwise contraction limits.
    Lemma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// One example per node: H = 1 with minimiser 0, H = 2 with minimiser 3.
    TwoNode,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub which: Lemma,
    /// Synthetic regression data for lemma1.
    #[arg(long, value_name = "SPEC", default_value = "gaussian:n=4000,d=10")]
    pub synthetic: String,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Give every node the whole dataset.
    #[arg(long)]
    pub identical_shards: bool,
    /// Dimension for lemma2.
    #[arg(long, default_value_t = 200)]
    pub d: usize,
    /// Aspect ratio d/n for lemma2.
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Samples per node for lemma2 (overrides --gamma).
    #[arg(long)]
    pub n_per_node: Option<usize>,
    /// Independent Wishart pairs for lemma2.
    #[arg(long, default_value_t = 5)]
    pub pairs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OptimumArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Write w* here, one coordinate per line.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let outcome = match cli.command {
        Command::Run(a) => commands::run(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Optimum(a) => commands::optimum(&a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
