use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "engage", version, about = "Simulate, train and evaluate engagement-based duration estimates")]
pub struct Cli {
    /// Seed for corpus generation, dataset splits and sampled traces.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,

    /// Output directory (each command has its own default).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a ground-truth parameter file.
    Simulate(SimulateArgs),
    /// Fit slope distributions on the training part of a corpus.
    Train(TrainArgs),
    /// Estimate one user's interaction duration.
    Estimate(EstimateArgs),
    /// Score duration estimates against observed durations.
    Evaluate(EvaluateArgs),
    /// Pretty-print a session, parameter file, scenario or corpus directory.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Validation,
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file; the built-in default scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,

    /// Override the scenario's session count.
    #[arg(long)]
    pub sessions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory (session files, or a `sessions` subdirectory).
    #[arg(long)]
    pub data: PathBuf,

    /// Initial parameters: a file, `default` or `reference`.
    #[arg(long, default_value = "default")]
    pub init: String,

    /// Couple dependent behaviors to co-present users (method 2).
    #[arg(long, value_enum, default_value = "on")]
    pub dependence: Switch,

    /// Share of sessions used for training; the rest is held out.
    #[arg(long, default_value_t = 0.79)]
    pub train_fraction: f64,

    /// Likelihood constant relating residual spread to observed duration.
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Iteration cap of the quasi-Newton run.
    #[arg(long)]
    pub max_iterations: Option<usize>,

    /// Relative half-width of the finite-difference gradient.
    #[arg(long)]
    pub gradient_step: Option<f64>,

    /// Relative objective decrease that counts as converged.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Session file (JSON or tab-separated).
    #[arg(long)]
    pub session: PathBuf,

    #[arg(long)]
    pub user: String,

    /// Parameters: a file, `default` or `reference`.
    #[arg(long, default_value = "default")]
    pub params: String,

    #[arg(long, value_enum, default_value = "on")]
    pub dependence: Switch,

    #[arg(long)]
    pub alpha: Option<f64>,

    /// Write the breakpoint trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,

    /// Draw slopes from the effective distributions (seeded by `--seed`).
    #[arg(long)]
    pub sampled: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,

    /// Parameters: a file, `default` or `reference`. With `--params2` these
    /// are scored as method 1.
    #[arg(long)]
    pub params: String,

    /// Second parameter set, scored as method 2 next to `--params`.
    #[arg(long, conflicts_with = "dependence")]
    pub params2: Option<String>,

    #[arg(long, value_enum)]
    pub dependence: Option<Switch>,

    #[arg(long)]
    pub alpha: Option<f64>,

    /// Split file written by `train`; restricts the corpus to `--subset`.
    #[arg(long)]
    pub split: Option<PathBuf>,

    #[arg(long, value_enum, requires = "split")]
    pub subset: Option<Subset>,

    /// Report path (defaults to `report.toml` in the output directory).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}
