//! `bigssa`: fit, predict, risk sweeps and simulation benchmarks from the
//! command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod data;
mod document;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use bigssa::TestFunction;
use clap::{Args, Parser, Subcommand};

use crate::data::ContinuousArg;

#[derive(Debug, Parser)]
#[command(name = "bigssa", version, about = "Smoothing spline ANOVA for large samples via predictor rounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and save it as a JSON document
    Fit(FitArgs),
    /// Evaluate a saved model on new data or on a plotting grid
    Predict(PredictArgs),
    /// Estimate the risk added by rounding over a list of rounding parameters
    Risk(RiskArgs),
    /// Run simulation benchmarks and write a results table
    Simulate(SimulateArgs),
}

/// Input columns and model structure shared by `fit` and `risk`.
#[derive(Debug, Args)]
struct ModelArgs {
    /// Comma-separated input with a header row
    #[arg(long)]
    data: PathBuf,

    /// Response column
    #[arg(long)]
    response: String,

    /// Continuous predictor as `name` (unrounded) or `name:r`; repeatable
    #[arg(long, value_name = "NAME[:R]")]
    continuous: Vec<ContinuousArg>,

    /// Nominal predictor; levels are read from the data; repeatable
    #[arg(long, value_name = "NAME")]
    nominal: Vec<String>,

    /// Number of knots (defaults to 21 for one predictor, 100 otherwise)
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    knots: Option<u32>,

    /// Penalty order of the continuous kernels (2 gives cubic splines)
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    order: u8,

    /// Include all two-way interactions
    #[arg(long)]
    interactions: bool,

    /// Seed for knot selection and subsampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Where to write the model document
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["data", "grid"]))]
struct PredictArgs {
    /// Model document written by `fit`
    #[arg(long)]
    model: PathBuf,

    /// Rows to predict at
    #[arg(long)]
    data: Option<PathBuf>,

    /// Predict on G evenly spaced points per continuous predictor instead
    #[arg(long, value_name = "G", value_parser = clap::value_parser!(u32).range(2..))]
    grid: Option<u32>,

    /// Add Bayesian interval bounds at this level, e.g. 0.95
    #[arg(long)]
    level: Option<f64>,

    /// Output file (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RiskArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Rounding parameters to evaluate, comma-separated; per-column `:r` suffixes are ignored
    #[arg(long = "r", value_delimiter = ',', required = true, num_args = 1..)]
    r_values: Vec<f64>,

    /// Subsample size per replication
    #[arg(long, default_value_t = 500)]
    subsample: usize,

    /// Number of subsamples
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Output file (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Test functions A1..A4, B1..B4, comma-separated
    #[arg(long = "fn", value_delimiter = ',', required = true, num_args = 1..)]
    functions: Vec<TestFunction>,

    /// Sample sizes, comma-separated
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    n: Vec<usize>,

    /// Rounding parameters, comma-separated; `none` fits unrounded data
    #[arg(long = "r", value_delimiter = ',', value_parser = parse_optional_r, default_value = "none")]
    r_values: Vec<Option<f64>>,

    /// Number of knots (defaults to 21 for A functions, 100 for B)
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    q: Option<u32>,

    /// Noise standard deviation
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,

    #[arg(long, default_value_t = 5)]
    reps: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output file (standard output when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_optional_r(s: &str) -> Result<Option<f64>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let r: f64 = s.parse().map_err(|_| format!("expected a number or `none`, got {s:?}"))?;
    if r > 0.0 && r <= 1.0 {
        Ok(Some(r))
    } else {
        Err(format!("rounding parameter must lie in (0, 1], got {r}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Risk(args) => commands::risk(&args),
        Command::Simulate(args) => commands::simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
