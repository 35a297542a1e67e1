//! Simulation studies: the k-NN MSE-inflation toy under response rounding,
//! and the default-versus-monotone comparison on three monotone scenarios.

mod knn;
mod monotonicity;
mod scenarios;
mod toy;

pub use knn::{knn_fit_predict, knn_predict, oracle_knn_rmse};
pub use monotonicity::{
    run_monotonicity_study, CurveFitter, MonotonicityConfig, OracleFitter, PsbartFitter,
    ReplicateResult, ScenarioSummary, SimResult,
};
pub use scenarios::{gen_monotone_dataset, Scenario, SimScenario, SCENARIOS};
pub use toy::{
    gen_toy_dataset, mse_inflation_ratio, run_mse_inflation_study, toy_function, InflationCell,
    InflationConfig, ToyData, XDist,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sampler::chain_rng;

/// Desk runs use reduced replicate counts and chain lengths; full runs use
/// the published study design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimScale {
    Desk,
    Full,
}

impl std::str::FromStr for SimScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Self::Desk),
            "full" => Ok(Self::Full),
            other => Err(format!("unknown scale `{other}` (expected desk or full)")),
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-cell seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `rep` of cell `cell` in a study seeded with `base`.
pub fn replicate_seed(base: u64, cell: u64, rep: u64) -> u64 {
    mix(mix(mix(base) ^ cell) ^ rep)
}

const DATA_STREAM: u64 = u64::MAX;

/// RNG for simulating the data of one replicate; disjoint from the sampler
/// streams of the same seed.
pub fn data_rng(seed: u64) -> ChaCha8Rng {
    chain_rng(seed, DATA_STREAM)
}

/// Mean and standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
