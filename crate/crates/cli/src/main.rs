//! `stringfit`: fit, diagnose, simulate and benchmark penalized-spline models.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stringfit::sampler::Estimator;
use stringfit::Error;

#[derive(Parser)]
#[command(
    name = "stringfit",
    version,
    about = "Bayesian penalized-spline function fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to CSV data and write the estimate, traces and a summary.
    Fit(FitArgs),
    /// Scan the smoothing ratio alpha and write marginal/GCV/AIC profiles.
    Diagnose(DiagnoseArgs),
    /// Generate scalar benchmark data or Lennard-Jones force samples.
    Simulate(SimulateArgs),
    /// Run one of the method-comparison studies.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Clone, Default)]
pub struct PriorArgs {
    /// Penalty prior family: X (zero-point), Y (hierarchical) or Z (fixed gamma).
    #[arg(long)]
    pub prior: Option<String>,
    /// Family parameters: `a,b` for Y, `b` for Z.
    #[arg(long)]
    pub prior_param: Option<String>,
    #[arg(long)]
    pub e0: Option<f64>,
    #[arg(long)]
    pub v0: Option<f64>,
}

#[derive(Args, Clone, Default)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// `lo:hi:n`, log-spaced.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    #[arg(long)]
    pub zhat: Option<f64>,
    #[command(flatten)]
    pub prior: PriorArgs,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// fig1-linear, fig3-sinusoid, figS-scale or fig-sample-lj.
    #[arg(long)]
    pub study: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum EstimatorArg {
    PosteriorMean,
    Mle,
    Gls,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::PosteriorMean => Estimator::PosteriorMean,
            EstimatorArg::Mle => Estimator::Mle,
            EstimatorArg::Gls => Estimator::Gls,
        }
    }
}

/// Outcome classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    /// 2: invalid configuration or flags.
    Config(String),
    /// 3: malformed input data.
    Input(String),
    /// 4: numerical failure (singular system, divergence, non-convergence).
    Numerical(String),
    /// 5: file system errors.
    Io(String),
    /// 6: outputs written but a self-check failed.
    SelfCheck(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Input(_) => 3,
            Failure::Numerical(_) => 4,
            Failure::Io(_) => 5,
            Failure::SelfCheck(_) => 6,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Config(m)
            | Failure::Input(m)
            | Failure::Numerical(m)
            | Failure::Io(m)
            | Failure::SelfCheck(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Parse { .. } | Error::Csv(_) | Error::OutOfDomain { .. } | Error::Domain { .. } => {
                Failure::Input(msg)
            }
            Error::Singular { .. }
            | Error::Diverged { .. }
            | Error::NotConverged { .. }
            | Error::Degenerate(_)
            | Error::IllConditioned { .. }
            | Error::BlowUp { .. } => Failure::Numerical(msg),
            Error::Io(_) => Failure::Io(msg),
            _ => Failure::Config(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stringfit: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
