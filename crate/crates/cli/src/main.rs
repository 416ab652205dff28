//! Batch driver for fitting, effect summaries, scenarios, simulation,
//! cross-validation and benchmark experiments. Every command writes CSV
//! tables plus a `manifest.json` recording the seeds, configuration hash and
//! input digests needed to re-run it.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "demofactor", version, about = "Latent-factor model for age-specific counts")]
struct Cli {
    /// Worker threads for replicate and fold parallelism.
    #[arg(long, global = true, env = "DEMOFACTOR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the sampler and write draws, predictive curves and diagnostics.
    Fit(FitArgs),
    /// Level, shape and nonlinear covariate effects from a draws checkpoint.
    Effects(EffectsArgs),
    /// Counterfactual projection for one subpopulation.
    Scenario(ScenarioArgs),
    /// Write a synthetic dataset and its truth sidecar.
    Simulate(SimulateArgs),
    /// Leave-one-curve-out cross-validation over models and factor counts.
    Cv(CvArgs),
    /// Replicated simulation experiment comparing the model with baselines.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Counts CSV with header `subpop,age,count[,offset]`.
    #[arg(long)]
    pub counts: PathBuf,
    /// Covariates CSV keyed by `subpop`; intercept-only when omitted.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Model configuration JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Drop subpopulations with fewer total observed counts.
    #[arg(long, default_value_t = 0)]
    pub min_total: u64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of latent factors.
    #[arg(long = "Q")]
    pub q: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Credible level of the interval columns.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Subpopulation of the traced predictive cell (first one by default).
    #[arg(long)]
    pub trace_subpop: Option<String>,
    /// Age of the traced predictive cell (middle age by default).
    #[arg(long)]
    pub trace_age: Option<i64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EffectsArgs {
    /// Draws checkpoint, or the directory written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// Evaluation values for a quadratic covariate, e.g. `deaths=10,50,300`.
    #[arg(long)]
    pub nonlinear: Vec<String>,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output directory (the checkpoint directory by default).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub draws: PathBuf,
    #[arg(long)]
    pub subpop: String,
    /// Covariate override on the original scale, e.g. `gdp=1.5`; quadratic
    /// companions follow automatically.
    #[arg(long = "set")]
    pub set: Vec<String>,
    /// Also contrast the predictive age composition with this subpopulation.
    #[arg(long)]
    pub contrast: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimVariant {
    Baseline,
    Outlier,
    Sparse,
    /// Baseline panel with one cell per curve dropped.
    Missing,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "baseline")]
    pub variant: SimVariant,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 60)]
    pub a: usize,
    /// Variance of the Gaussian log-scale noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Factor counts: a range `1..10` or a list `2,4,6`.
    #[arg(long = "Q", default_value = "1..6")]
    pub q: String,
    /// Comma-separated models: bayes, bayes_nocov, svd, smooth_svd.
    #[arg(long, default_value = "bayes,svd,smooth_svd,bayes_nocov")]
    pub models: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Insample,
    Missing,
    Oos,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentVariant {
    Baseline,
    Outlier,
    Sparse,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub experiment: Experiment,
    #[arg(long, value_enum, default_value = "baseline")]
    pub variant: ExperimentVariant,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Short chains, `N = 100`, `A = 60` (the default).
    #[arg(long, conflicts_with = "full")]
    pub desk_scale: bool,
    /// Long chains and 25 replicates.
    #[arg(long)]
    pub full: bool,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        Command::Fit(a) => commands::fit(a, &argv),
        Command::Effects(a) => commands::effects(a, &argv),
        Command::Scenario(a) => commands::scenario(a, &argv),
        Command::Simulate(a) => commands::simulate(a, &argv),
        Command::Cv(a) => commands::cv(a, &argv),
        Command::Benchmark(a) => commands::benchmark(a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 when the sampler aborted, 1 for every other failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    use demofactor::Error;
    match e.downcast_ref::<Error>() {
        Some(Error::Sampler { .. } | Error::NotPositiveDefinite(_) | Error::RankDeficient { .. }) => 2,
        _ => 1,
    }
}
