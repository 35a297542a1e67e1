use std::path::Path;

use psbart::sim::{
    run_monotonicity_study, run_mse_inflation_study, InflationConfig, MonotonicityConfig,
    PsbartFitter, SimScale,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::write_csv;
use crate::error::CliError;
use crate::manifest::{create_dir, RunManifest};
use crate::{Scale, SimulateArgs, Study};

pub const TABLE_FILE: &str = "table1.csv";
pub const SUMMARY_FILE: &str = "scenarios.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const INFLATION_FILE: &str = "inflation.csv";

const DEFAULT_SEED: u64 = 20_241_014;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "study", content = "config", rename_all = "kebab-case")]
enum SimRun {
    MseInflation(InflationConfig),
    Monotonicity(MonotonicityConfig),
}

impl SimRun {
    fn seed(&self) -> u64 {
        match self {
            SimRun::MseInflation(c) => c.seed,
            SimRun::Monotonicity(c) => c.seed,
        }
    }
}

fn assemble(args: &SimulateArgs) -> Result<SimRun, CliError> {
    let scale = match args.scale {
        Scale::Desk => SimScale::Desk,
        Scale::Full => SimScale::Full,
    };
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    if args.replicates == Some(0) {
        return Err(CliError::Usage("--replicates must be at least 1".into()));
    }
    match args.study {
        Some(Study::MseInflation) => {
            let mut cfg = InflationConfig::at_scale(scale, seed);
            if let Some(s) = &args.sigmas {
                if s.is_empty() || s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(CliError::Usage("--sigmas must be positive numbers".into()));
                }
                cfg.sigmas = s.clone();
            }
            if let Some(r) = args.replicates {
                cfg.draws = r;
            }
            Ok(SimRun::MseInflation(cfg))
        }
        Some(Study::Monotonicity) => {
            if args.sigmas.is_some() {
                return Err(CliError::Usage("--sigmas applies only to the mse-inflation study".into()));
            }
            let mut cfg = MonotonicityConfig::at_scale(scale, seed);
            if let Some(r) = args.replicates {
                cfg.replicates = r;
            }
            Ok(SimRun::Monotonicity(cfg))
        }
        None => Err(CliError::Usage("--study is required".into())),
    }
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let request = match &args.replay {
        Some(path) => RunManifest::read_config::<SimRun>(path, "simulate")?.1,
        None => assemble(args)?,
    };
    let manifest = RunManifest::begin("simulate", request.seed(), &request)?;
    create_dir(&args.out)?;
    let files = match &request {
        SimRun::MseInflation(cfg) => write_inflation(cfg, &args.out)?,
        SimRun::Monotonicity(cfg) => write_monotonicity(cfg, &args.out)?,
    };
    manifest.finish(&args.out, &files)?;
    println!("wrote {} to {}", files.join(", "), args.out.display());
    Ok(())
}

fn write_inflation(cfg: &InflationConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let cells = run_mse_inflation_study(cfg)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.x_dist.clone(),
                c.k.to_string(),
                c.sigma.to_string(),
                c.mean_ratio.to_string(),
                c.se.to_string(),
                c.draws.to_string(),
            ]
        })
        .collect();
    let header = ["x_dist", "k", "sigma", "mean_ratio", "se", "draws"];
    write_csv(&out.join(INFLATION_FILE), &header, &rows)?;
    Ok(vec![INFLATION_FILE.into()])
}

fn write_monotonicity(cfg: &MonotonicityConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let fitter = PsbartFitter {
        config: cfg.sampler.clone(),
    };
    let result = run_monotonicity_study(cfg, &fitter)?;

    let table: Vec<Vec<String>> = result
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.scenario.name().to_string(),
                format!("{:.4}", s.mse_default),
                format!("{:.4}", s.mse_monotone),
                format!("{:.2}", s.percent_reduction),
            ]
        })
        .collect();
    let header = ["Scenario", "MSE Default", "MSE Monotone", "Percent MSE Reduction"];
    write_csv(&out.join(TABLE_FILE), &header, &table)?;

    let summary: Vec<Vec<String>> = result
        .summaries
        .iter()
        .map(|s| {
            vec![
                s.scenario.name().to_string(),
                s.replicates.to_string(),
                s.mse_default.to_string(),
                s.se_default.to_string(),
                s.mse_monotone.to_string(),
                s.se_monotone.to_string(),
                s.percent_reduction.to_string(),
                s.se_difference.to_string(),
            ]
        })
        .collect();
    let header = [
        "scenario",
        "replicates",
        "mse_default",
        "se_default",
        "mse_monotone",
        "se_monotone",
        "percent_reduction",
        "se_difference",
    ];
    write_csv(&out.join(SUMMARY_FILE), &header, &summary)?;

    let reps: Vec<Vec<String>> = result
        .replicates
        .iter()
        .map(|r| {
            vec![
                r.scenario.name().to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.mse_default.to_string(),
                r.mse_monotone.to_string(),
                r.truth_mse_default.to_string(),
                r.truth_mse_monotone.to_string(),
            ]
        })
        .collect();
    let header = [
        "scenario",
        "replicate",
        "seed",
        "mse_default",
        "mse_monotone",
        "truth_mse_default",
        "truth_mse_monotone",
    ];
    write_csv(&out.join(REPLICATES_FILE), &header, &reps)?;
    Ok(vec![TABLE_FILE.into(), SUMMARY_FILE.into(), REPLICATES_FILE.into()])
}
