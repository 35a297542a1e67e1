use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{data_rng, gen_monotone_dataset, mean_se, replicate_seed, Scenario, SimScale, SimScenario, SCENARIOS};
use crate::data::{Dataset, Profile};
use crate::error::{PsbartError, Result};
use crate::monotone::project_draws;
use crate::sampler::{run_mcmc, PosteriorDraws, SamplerConfig};

/// Anything that turns a training set into draws of curves over the mesh
/// for a grid of profiles.
pub trait CurveFitter: Sync {
    fn fit(&self, train: &Dataset, grid: &[Profile], seed: u64) -> Result<PosteriorDraws>;
}

/// The psBART sampler with a fixed configuration; the seed is replaced per
/// replicate.
#[derive(Debug, Clone)]
pub struct PsbartFitter {
    pub config: SamplerConfig,
}

impl CurveFitter for PsbartFitter {
    fn fit(&self, train: &Dataset, grid: &[Profile], seed: u64) -> Result<PosteriorDraws> {
        let cfg = SamplerConfig {
            seed,
            ..self.config.clone()
        };
        Ok(run_mcmc(train, &cfg, grid)?.draws)
    }
}

/// Returns the true curves as a single draw.
#[derive(Debug, Clone, Copy)]
pub struct OracleFitter {
    pub scenario: Scenario,
}

impl CurveFitter for OracleFitter {
    fn fit(&self, train: &Dataset, grid: &[Profile], _seed: u64) -> Result<PosteriorDraws> {
        let f = grid.iter().flat_map(|p| self.scenario.curve(&p.x)).collect();
        Ok(PosteriorDraws {
            mesh: train.mesh().values().to_vec(),
            profiles: grid.to_vec(),
            n_draws: 1,
            f,
            sigma2: vec![0.0],
            latent: None,
            projected: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityConfig {
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    pub n: usize,
    pub train_frac: f64,
    pub noise_sd: f64,
    pub sampler: SamplerConfig,
    pub seed: u64,
}

impl MonotonicityConfig {
    pub fn at_scale(scale: SimScale, seed: u64) -> Self {
        let (replicates, sampler) = match scale {
            SimScale::Desk => (
                10,
                SamplerConfig {
                    m: 50,
                    n_burn: 500,
                    n_save: 500,
                    ..SamplerConfig::default()
                },
            ),
            SimScale::Full => (50, SamplerConfig::default()),
        };
        Self {
            scenarios: SCENARIOS.to_vec(),
            replicates,
            n: 1000,
            train_frac: 0.8,
            noise_sd: 1.0,
            sampler,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub scenario: Scenario,
    pub replicate: usize,
    pub seed: u64,
    /// Test-set MSE against the noisy held-out responses.
    pub mse_default: f64,
    pub mse_monotone: f64,
    /// Test-set MSE against the noiseless truth.
    pub truth_mse_default: f64,
    pub truth_mse_monotone: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub replicates: usize,
    pub mse_default: f64,
    pub mse_monotone: f64,
    pub percent_reduction: f64,
    pub se_default: f64,
    pub se_monotone: f64,
    /// Standard error of the per-replicate difference default - monotone.
    pub se_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub replicates: Vec<ReplicateResult>,
    pub summaries: Vec<ScenarioSummary>,
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / target.len() as f64
}

/// Posterior-mean prediction for grid profile `i` at mesh index `t_index[i]`.
fn predictions(draws: &PosteriorDraws, t_index: &[usize]) -> Vec<f64> {
    t_index
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            (0..draws.n_draws).map(|s| draws.curve(s, i)[j]).sum::<f64>() / draws.n_draws as f64
        })
        .collect()
}

fn run_replicate(
    cfg: &MonotonicityConfig,
    fitter: &dyn CurveFitter,
    cell: usize,
    scenario: Scenario,
    replicate: usize,
) -> Result<ReplicateResult> {
    let seed = replicate_seed(cfg.seed, cell as u64, replicate as u64);
    let mut rng = data_rng(seed);
    let spec = SimScenario {
        scenario,
        noise_sd: cfg.noise_sd,
        n: cfg.n,
    };
    let (data, truth) = gen_monotone_dataset(&spec, &mut rng)?;
    let mut rows: Vec<usize> = (0..data.len()).collect();
    rows.shuffle(&mut rng);
    let n_train = ((cfg.n as f64) * cfg.train_frac).round() as usize;
    if n_train == 0 || n_train >= cfg.n {
        return Err(PsbartError::InvalidInput(format!(
            "train fraction {} leaves an empty split",
            cfg.train_frac
        )));
    }
    let (train_rows, test_rows) = rows.split_at(n_train);
    let train = data.subset(train_rows);
    let test = data.subset(test_rows);

    let grid: Vec<Profile> = test
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| Profile::new(o.x.clone(), format!("test{i}")))
        .collect();
    let t_index: Vec<usize> = test.observations().iter().map(|o| o.t_index).collect();
    let y_test = test.responses();
    let f_test: Vec<f64> = test_rows.iter().map(|&i| truth[i]).collect();

    let mut draws = fitter.fit(&train, &grid, seed)?;
    let default = predictions(&draws, &t_index);
    project_draws(&mut draws)?;
    let monotone = predictions(&draws, &t_index);

    Ok(ReplicateResult {
        scenario,
        replicate,
        seed,
        mse_default: mse(&default, &y_test),
        mse_monotone: mse(&monotone, &y_test),
        truth_mse_default: mse(&default, &f_test),
        truth_mse_monotone: mse(&monotone, &f_test),
    })
}

/// Fits each replicate once and scores the unprojected and projected
/// posterior-mean predictions on the held-out rows.
pub fn run_monotonicity_study(cfg: &MonotonicityConfig, fitter: &dyn CurveFitter) -> Result<SimResult> {
    if cfg.replicates == 0 {
        return Err(PsbartError::InvalidInput("need at least one replicate".into()));
    }
    let jobs: Vec<(usize, Scenario, usize)> = cfg
        .scenarios
        .iter()
        .enumerate()
        .flat_map(|(cell, &sc)| (0..cfg.replicates).map(move |r| (cell, sc, r)))
        .collect();
    let replicates = jobs
        .par_iter()
        .map(|&(cell, sc, r)| {
            run_replicate(cfg, fitter, cell, sc, r).map_err(|e| PsbartError::Replicate {
                replicate: r,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summaries = cfg
        .scenarios
        .iter()
        .map(|&scenario| {
            let rows: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.scenario == scenario).collect();
            let d: Vec<f64> = rows.iter().map(|r| r.mse_default).collect();
            let m: Vec<f64> = rows.iter().map(|r| r.mse_monotone).collect();
            let diff: Vec<f64> = rows.iter().map(|r| r.mse_default - r.mse_monotone).collect();
            let (mse_default, se_default) = mean_se(&d);
            let (mse_monotone, se_monotone) = mean_se(&m);
            ScenarioSummary {
                scenario,
                replicates: rows.len(),
                mse_default,
                mse_monotone,
                percent_reduction: 100.0 * (mse_default - mse_monotone) / mse_default,
                se_default,
                se_monotone,
                se_difference: mean_se(&diff).1,
            }
        })
        .collect();
    Ok(SimResult {
        replicates,
        summaries,
    })
}
