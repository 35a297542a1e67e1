//! Posterior summaries over a prediction grid: centroid profiles, pointwise
//! credible and prediction bands, and the contrast between the two levels of
//! a binary flag covariate.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, Dataset, Profile};
use crate::error::{PsbartError, Result};
use crate::sampler::PosteriorDraws;

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and equal-tailed interval of a sample.
fn mean_interval(values: &mut [f64], level: f64) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let lower = quantile_sorted(values, tail).min(mean);
    let upper = quantile_sorted(values, 1.0 - tail).max(mean);
    (mean, lower, upper)
}

/// Synthetic covariate vector of per-covariate means for continuous
/// covariates and modes for categorical ones (ties go to the lowest level).
pub fn centroid_profile(data: &Dataset) -> Result<Profile> {
    if data.is_empty() {
        return Err(PsbartError::InvalidInput("centroid of an empty dataset".into()));
    }
    let n = data.len() as f64;
    let x = data
        .schema()
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let column = data.observations().iter().map(|o| o.x[j]);
            match spec.kind {
                CovariateKind::Continuous => column.sum::<f64>() / n,
                CovariateKind::Categorical { .. } => {
                    let mut levels: Vec<f64> = column.collect();
                    levels.sort_by(f64::total_cmp);
                    let mut best = (levels[0], 0usize);
                    let mut run = (levels[0], 0usize);
                    for v in levels {
                        if v == run.0 {
                            run.1 += 1;
                        } else {
                            run = (v, 1);
                        }
                        if run.1 > best.1 {
                            best = run;
                        }
                    }
                    best.0
                }
            }
        })
        .collect();
    Ok(Profile::new(x, "centroid"))
}

/// Pointwise summary of a function over the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mesh: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    fn from_columns(mesh: &[f64], mut columns: Vec<Vec<f64>>, level: f64) -> Self {
        let mut band = Band {
            mesh: mesh.to_vec(),
            mean: Vec::with_capacity(mesh.len()),
            lower: Vec::with_capacity(mesh.len()),
            upper: Vec::with_capacity(mesh.len()),
        };
        for col in &mut columns {
            let (m, l, u) = mean_interval(col, level);
            band.mean.push(m);
            band.lower.push(l);
            band.upper.push(u);
        }
        band
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(PsbartError::InvalidInput(format!("band level {level} not in (0, 1)")))
    }
}

fn check_profile(draws: &PosteriorDraws, profile: usize) -> Result<()> {
    if profile < draws.n_profiles() {
        Ok(())
    } else {
        Err(PsbartError::Layout(format!(
            "profile {profile} out of range for {} profiles",
            draws.n_profiles()
        )))
    }
}

/// Posterior mean and equal-tailed credible band of `f(t, x_profile)`.
pub fn curve_band(draws: &PosteriorDraws, profile: usize, level: f64) -> Result<Band> {
    check_level(level)?;
    check_profile(draws, profile)?;
    let columns = (0..draws.t_len())
        .map(|j| (0..draws.n_draws).map(|s| draws.curve(s, profile)[j]).collect())
        .collect();
    Ok(Band::from_columns(&draws.mesh, columns, level))
}

/// Posterior predictive band for a new response at each mesh point: every
/// draw of `f` gets its own `N(0, sigma^2)` noise.
pub fn prediction_band<R: Rng + ?Sized>(
    draws: &PosteriorDraws,
    profile: usize,
    level: f64,
    rng: &mut R,
) -> Result<Band> {
    check_level(level)?;
    check_profile(draws, profile)?;
    let t = draws.t_len();
    let mut columns = vec![Vec::with_capacity(draws.n_draws); t];
    for s in 0..draws.n_draws {
        let noise = Normal::new(0.0, draws.sigma2[s].sqrt())
            .map_err(|e| PsbartError::IllConditioned(e.to_string()))?;
        for (col, f) in columns.iter_mut().zip(draws.curve(s, profile)) {
            col.push(f + noise.sample(rng));
        }
    }
    Ok(Band::from_columns(&draws.mesh, columns, level))
}

/// `base` with the flag covariate set to 0 and to 1.
pub fn toggled_profiles(base: &Profile, flag: usize) -> Result<[Profile; 2]> {
    if flag >= base.x.len() {
        return Err(PsbartError::InvalidInput(format!(
            "flag covariate {flag} out of range for {} covariates",
            base.x.len()
        )));
    }
    let with = |level: f64| {
        let mut x = base.x.clone();
        x[flag] = level;
        Profile::new(x, format!("{}|flag={level}", base.label))
    };
    Ok([with(0.0), with(1.0)])
}

/// Prediction grid holding both toggled versions of every base profile.
pub fn contrast_grid(bases: &[Profile], flag: usize) -> Result<Vec<Profile>> {
    let mut grid = Vec::with_capacity(2 * bases.len());
    for base in bases {
        grid.extend(toggled_profiles(base, flag)?);
    }
    Ok(grid)
}

/// Per-draw `Delta(t) = f(t, flag=1, v) - f(t, flag=0, v)` for a fixed
/// base profile `v`, summarized pointwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub label: String,
    pub projected: bool,
    pub band: Band,
}

fn contrast_draws(draws: &PosteriorDraws, flag: usize, base: &Profile) -> Result<Vec<Vec<f64>>> {
    let [off, on] = toggled_profiles(base, flag)?;
    let find = |p: &Profile| {
        draws.find_profile(&p.x).ok_or_else(|| {
            PsbartError::Layout(format!("prediction grid lacks profile {:?}", p.x))
        })
    };
    let (i0, i1) = (find(&off)?, find(&on)?);
    Ok((0..draws.t_len())
        .map(|j| {
            (0..draws.n_draws)
                .map(|s| draws.curve(s, i1)[j] - draws.curve(s, i0)[j])
                .collect()
        })
        .collect())
}

pub fn contrast(
    draws: &PosteriorDraws,
    flag: usize,
    base: &Profile,
    level: f64,
) -> Result<ContrastResult> {
    check_level(level)?;
    let columns = contrast_draws(draws, flag, base)?;
    Ok(ContrastResult {
        label: base.label.clone(),
        projected: draws.projected,
        band: Band::from_columns(&draws.mesh, columns, level),
    })
}

/// Pointwise range of the posterior-mean contrast over a set of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub mesh: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn envelope(draws: &PosteriorDraws, flag: usize, bases: &[Profile]) -> Result<Envelope> {
    if bases.is_empty() {
        return Err(PsbartError::InvalidInput("envelope needs at least one profile".into()));
    }
    let t = draws.t_len();
    let mut env = Envelope {
        mesh: draws.mesh.clone(),
        min: vec![f64::INFINITY; t],
        max: vec![f64::NEG_INFINITY; t],
    };
    for base in bases {
        let columns = contrast_draws(draws, flag, base)?;
        for (j, col) in columns.iter().enumerate() {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            env.min[j] = env.min[j].min(mean);
            env.max[j] = env.max[j].max(mean);
        }
    }
    Ok(env)
}
