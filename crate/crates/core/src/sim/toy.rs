use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{data_rng, knn_fit_predict, mean_se, replicate_seed, SimScale};
use crate::error::{PsbartError, Result};

/// Support of the toy covariate.
pub const X_RANGE: (f64, f64) = (-6.0, 6.0);

/// `10 / (1 + exp(-x)) - x`.
pub fn toy_function(x: f64) -> f64 {
    10.0 / (1.0 + (-x).exp()) - x
}

/// Covariate distribution on [`X_RANGE`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum XDist {
    Uniform,
    /// `Beta(a, b)` rescaled to the covariate range.
    Beta { a: f64, b: f64 },
}

impl XDist {
    pub fn default_beta() -> Self {
        Self::Beta { a: 8.0, b: 2.0 }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Beta { a, b } => format!("beta({a},{b})"),
        }
    }

    fn sampler(&self) -> Result<Option<Beta<f64>>> {
        match *self {
            Self::Uniform => Ok(None),
            Self::Beta { a, b } => Beta::new(a, b)
                .map(Some)
                .map_err(|e| PsbartError::InvalidInput(format!("beta({a}, {b}): {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_rounded: Vec<f64>,
}

/// `y ~ N(f(x), sigma^2)` and `y` rounded to the nearest multiple of `c`.
pub fn gen_toy_dataset<R: Rng + ?Sized>(
    sigma: f64,
    x_dist: XDist,
    n: usize,
    c: f64,
    rng: &mut R,
) -> Result<ToyData> {
    if !(sigma > 0.0) || n == 0 || !(c > 0.0) {
        return Err(PsbartError::InvalidInput(format!(
            "toy data needs sigma > 0, n >= 1, c > 0 (got {sigma}, {n}, {c})"
        )));
    }
    let beta = x_dist.sampler()?;
    let noise = Normal::new(0.0, sigma).map_err(|e| PsbartError::InvalidInput(e.to_string()))?;
    let (lo, hi) = X_RANGE;
    let mut data = ToyData {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y_rounded: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let u = match &beta {
            Some(b) => b.sample(rng),
            None => rng.random_range(0.0..1.0),
        };
        let x = lo + (hi - lo) * u;
        let y = toy_function(x) + noise.sample(rng);
        data.x.push(x);
        data.y.push(y);
        data.y_rounded.push((y / c).round() * c);
    }
    Ok(data)
}

/// MSE against the truth of the rounded-response fit over that of the
/// plain fit.
pub fn mse_inflation_ratio(f_true: &[f64], fit_plain: &[f64], fit_rounded: &[f64]) -> Result<f64> {
    if f_true.len() != fit_plain.len() || f_true.len() != fit_rounded.len() || f_true.is_empty() {
        return Err(PsbartError::InvalidInput("fits and truth differ in length".into()));
    }
    let mse = |fit: &[f64]| fit.iter().zip(f_true).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let plain = mse(fit_plain);
    if plain == 0.0 {
        return Err(PsbartError::DegenerateScale(
            "plain fit has zero MSE; inflation ratio undefined".into(),
        ));
    }
    Ok(mse(fit_rounded) / plain)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationConfig {
    pub sigmas: Vec<f64>,
    pub x_dists: Vec<XDist>,
    pub ks: Vec<usize>,
    pub n: usize,
    /// Monte Carlo datasets per (x distribution, k, sigma) cell.
    pub draws: usize,
    pub c: f64,
    pub seed: u64,
}

impl InflationConfig {
    pub fn at_scale(scale: SimScale, seed: u64) -> Self {
        Self {
            sigmas: vec![0.3, 0.6, 1.0, 2.0, 3.0],
            x_dists: vec![XDist::Uniform, XDist::default_beta()],
            ks: vec![10, 30],
            n: 500,
            draws: match scale {
                SimScale::Desk => 200,
                SimScale::Full => 1000,
            },
            c: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationCell {
    pub x_dist: String,
    pub k: usize,
    pub sigma: f64,
    pub mean_ratio: f64,
    pub se: f64,
    pub draws: usize,
}

/// One row per (x distribution, k, sigma), in that nesting order.
///
/// Each Monte Carlo draw simulates a dataset, fits k-NN to the plain and
/// the rounded responses, and scores both against the truth at the
/// training inputs.
pub fn run_mse_inflation_study(cfg: &InflationConfig) -> Result<Vec<InflationCell>> {
    if cfg.draws == 0 {
        return Err(PsbartError::InvalidInput("need at least one Monte Carlo draw".into()));
    }
    let mut cells = Vec::new();
    for &x_dist in &cfg.x_dists {
        for &k in &cfg.ks {
            for &sigma in &cfg.sigmas {
                cells.push((x_dist, k, sigma));
            }
        }
    }
    cells
        .iter()
        .enumerate()
        .map(|(ci, &(x_dist, k, sigma))| {
            let ratios = (0..cfg.draws as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = data_rng(replicate_seed(cfg.seed, ci as u64, rep));
                    let d = gen_toy_dataset(sigma, x_dist, cfg.n, cfg.c, &mut rng)?;
                    let truth: Vec<f64> = d.x.iter().map(|&x| toy_function(x)).collect();
                    let plain = knn_fit_predict(&d.x, &d.y, &d.x, k)?;
                    let rounded = knn_fit_predict(&d.x, &d.y_rounded, &d.x, k)?;
                    mse_inflation_ratio(&truth, &plain, &rounded).map_err(|e| PsbartError::Replicate {
                        replicate: rep as usize,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean_ratio, se) = mean_se(&ratios);
            Ok(InflationCell {
                x_dist: x_dist.label(),
                k,
                sigma,
                mean_ratio,
                se,
                draws: cfg.draws,
            })
        })
        .collect()
}
