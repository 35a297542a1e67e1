use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSpec, Dataset, TargetMesh};
use crate::error::{PsbartError, Result};

/// Monotone-in-`t` truth functions of `(t, x1, x2)`, `t` in `1..=10`,
/// `x1 ~ U(0.5, 1.5)`, `x2 ~ U(0, 1)`.
///
/// The names follow the published table rows; they do not describe the
/// formula shapes (the `Arctan` row is a logistic in `t`, `Sigmoid` is
/// linear in `t`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    Arctan,
    Linear,
    Sigmoid,
}

pub const SCENARIOS: [Scenario; 3] = [Scenario::Arctan, Scenario::Linear, Scenario::Sigmoid];

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::Arctan => "Arctan",
            Self::Linear => "Linear",
            Self::Sigmoid => "Sigmoid",
        }
    }

    pub fn truth(self, t: f64, x1: f64, x2: f64) -> f64 {
        match self {
            Self::Arctan => 2.0 + 0.5 * x2 + 1.0 / (1.0 + (-x1 * (t - 5.0)).exp()),
            Self::Linear => 2.0 + t.atan() + 0.25 * x1 * (t / 5.0) - 0.5 * x2,
            Self::Sigmoid => 2.0 + t / (8.0 * x1) + 0.5 * x2,
        }
    }

    pub fn mesh() -> TargetMesh {
        TargetMesh::integer_range(1, 10).expect("valid mesh")
    }

    pub fn schema() -> Vec<CovariateSpec> {
        vec![CovariateSpec::continuous("x1"), CovariateSpec::continuous("x2")]
    }

    /// True curve over the mesh for covariates `x = [x1, x2]`.
    pub fn curve(self, x: &[f64]) -> Vec<f64> {
        Self::mesh()
            .values()
            .iter()
            .map(|&t| self.truth(t, x[0], x[1]))
            .collect()
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        SCENARIOS
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub scenario: Scenario,
    pub noise_sd: f64,
    pub n: usize,
}

impl SimScenario {
    pub fn standard(scenario: Scenario, n: usize) -> Self {
        Self {
            scenario,
            noise_sd: 1.0,
            n,
        }
    }
}

/// `n` rows of `y = f(t, x1, x2) + noise_sd * eps` without coarsening,
/// together with the noiseless `f` of each row.
pub fn gen_monotone_dataset<R: Rng + ?Sized>(
    spec: &SimScenario,
    rng: &mut R,
) -> Result<(Dataset, Vec<f64>)> {
    if spec.n == 0 || !(spec.noise_sd >= 0.0) {
        return Err(PsbartError::InvalidInput(format!(
            "invalid scenario: n = {}, noise_sd = {}",
            spec.n, spec.noise_sd
        )));
    }
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| PsbartError::InvalidInput(e.to_string()))?;
    let mut truth = Vec::with_capacity(spec.n);
    let rows = (0..spec.n)
        .map(|_| {
            let t = rng.random_range(1..=10) as f64;
            let x1 = rng.random_range(0.5..1.5);
            let x2 = rng.random_range(0.0..1.0);
            let f = spec.scenario.truth(t, x1, x2);
            truth.push(f);
            (t, vec![x1, x2], f + noise.sample(rng))
        })
        .collect();
    let data = Dataset::from_rows(rows, Scenario::mesh(), None, Scenario::schema())?;
    Ok((data, truth))
}
