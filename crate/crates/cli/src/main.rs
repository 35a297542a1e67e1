mod artifacts;
mod error;
mod fit;
mod manifest;
mod simulate;
mod summarize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "psbart", version, about = "Smooth monotone BART over a target mesh")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the sampler on a dataset and write posterior draws.
    Fit(FitArgs),
    /// Turn the draws of a fit into bands, contrasts and envelopes.
    Summarize(SummarizeArgs),
    /// Run one of the simulation studies.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Delimited input file with a header row.
    #[arg(long, required_unless_present = "replay")]
    pub data: Option<PathBuf>,
    /// TOML file with a `[data]` table of column roles and an optional
    /// `[sampler]` table.
    #[arg(long, required_unless_present = "replay")]
    pub config: Option<PathBuf>,
    /// Project every curve draw onto non-decreasing functions.
    #[arg(long)]
    pub monotone: bool,
    /// Rounding width of the response; 0 disables coarsening.
    #[arg(long, allow_negative_numbers = true)]
    pub coarsening_width: Option<f64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub burn: Option<usize>,
    #[arg(long)]
    pub save: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GP length-scale.
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    /// CSV of covariate profiles to predict at, one column per covariate
    /// plus an optional `label` column. Defaults to the centroid profile.
    #[arg(long)]
    pub predict_profiles: Option<PathBuf>,
    /// Covariate toggled 0/1 for contrasts; predicts both versions of
    /// every profile.
    #[arg(long)]
    pub contrast: Option<String>,
    /// Re-run the fit recorded in a manifest.
    #[arg(long, conflicts_with_all = ["data", "config", "monotone", "coarsening_width", "trees",
        "burn", "save", "thin", "seed", "theta", "predict_profiles", "contrast"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Output directory of a fit.
    #[arg(long)]
    pub run: PathBuf,
    /// Credible level of the bands.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Seed for the noise draws of the prediction bands.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    MseInflation,
    Monotonicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "replay")]
    pub study: Option<Study>,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated noise levels for the inflation study.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Override of the replicate count (monotonicity) or Monte Carlo draws
    /// per cell (inflation).
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, conflicts_with_all = ["study", "seed", "sigmas", "replicates"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PSBART_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("PSBART_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(args) => fit::run(&args),
        Command::Summarize(args) => summarize::run(&args),
        Command::Simulate(args) => simulate::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return CliError::Usage(e.to_string()).report(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
