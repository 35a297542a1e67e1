//! Bayesian backfitting MCMC with truncated-normal imputation of coarsened
//! responses.
//!
//! One iteration:
//! 1. impute the latent response of every coarsened observation from its
//!    normal full conditional truncated to the rounding bin `[y - c/2, y + c/2)`;
//! 2. for each tree, subtract its fit, propose a grow/prune move against the
//!    partial residuals and redraw its leaf functions;
//! 3. draw `sigma^2` from its scaled-inverse-chi-squared full conditional.
//!
//! Sampling runs on the standardized response scale; saved draws are mapped
//! back to the raw scale.

mod truncnorm;

pub use truncnorm::{sample_truncated_normal, standard_truncated};
use truncnorm::clamp_half_open;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared as ChiSquaredDist, ContinuousCDF};

use crate::data::{standardize_response, Dataset, Profile, Standardization};
use crate::error::{PsbartError, Result};
use crate::gp::{default_tau2, default_theta, GpConfig, GpKernel};
use crate::tree::{propose_move, refresh_leaves, Design, Ensemble, MoveContext, TreePrior};

/// Prior `sigma^2 ~ nu * lambda / chi^2_nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaPrior {
    pub nu: f64,
    /// Scale on the standardized response scale; `None` calibrates it so
    /// that `P(sigma < sigma_hat) = 0.9`, with `sigma_hat` from a linear
    /// least-squares fit on `(t, x)`.
    pub lambda: Option<f64>,
}

impl Default for SigmaPrior {
    fn default() -> Self {
        Self {
            nu: 3.0,
            lambda: None,
        }
    }
}

/// Fully specified scaled-inverse-chi-squared distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledInvChi2 {
    pub nu: f64,
    pub lambda: f64,
}

impl ScaledInvChi2 {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let chi = ChiSquared::new(self.nu).expect("nu > 0");
        self.nu * self.lambda / chi.sample(rng)
    }
}

/// Optional overrides for the GP leaf prior; `None` picks the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GpSettings {
    pub theta: Option<f64>,
    pub tau2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_burn: usize,
    pub n_save: usize,
    pub thin: usize,
    /// Number of trees.
    pub m: usize,
    pub tree_prior: TreePrior,
    pub gp: GpSettings,
    pub sigma_prior: SigmaPrior,
    pub seed: u64,
    /// Keep latent responses fixed at the observed values even for
    /// coarsened rows.
    pub skip_imputation: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_burn: 1000,
            n_save: 1000,
            thin: 1,
            m: 200,
            tree_prior: TreePrior::default(),
            gp: GpSettings::default(),
            sigma_prior: SigmaPrior::default(),
            seed: 0,
            skip_imputation: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_save == 0 {
            return Err(PsbartError::InvalidInput("n_save must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(PsbartError::InvalidInput("thin must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(PsbartError::InvalidInput("need at least one tree".into()));
        }
        if !(self.sigma_prior.nu > 0.0) {
            return Err(PsbartError::InvalidInput("nu must be positive".into()));
        }
        if let Some(l) = self.sigma_prior.lambda {
            if !(l > 0.0) {
                return Err(PsbartError::InvalidInput("lambda must be positive".into()));
            }
        }
        TreePrior::new(self.tree_prior.alpha, self.tree_prior.beta)?;
        Ok(())
    }
}

/// Model hyperparameters after defaults have been resolved against data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub m: usize,
    pub tree_prior: TreePrior,
    pub gp: GpConfig,
    pub sigma_prior: ScaledInvChi2,
    pub impute: bool,
}

impl ModelSettings {
    /// Resolves `cfg` against a dataset already on the model scale.
    pub fn resolve(cfg: &SamplerConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let mesh = data.mesh().clone();
        let theta = cfg.gp.theta.unwrap_or_else(|| default_theta(&mesh));
        let tau2 = cfg.gp.tau2.unwrap_or_else(|| default_tau2(cfg.m));
        let lambda = match cfg.sigma_prior.lambda {
            Some(l) => l,
            None => calibrate_lambda(data, cfg.sigma_prior.nu)?,
        };
        Ok(Self {
            m: cfg.m,
            tree_prior: cfg.tree_prior,
            gp: GpConfig::new(theta, tau2, mesh)?,
            sigma_prior: ScaledInvChi2 {
                nu: cfg.sigma_prior.nu,
                lambda,
            },
            impute: !cfg.skip_imputation,
        })
    }
}

/// Residual SD of the least-squares fit of `y` on `[1, t, x]`, falling back
/// to the sample SD when the design is rank deficient or too small.
pub fn linear_fit_sigma(data: &Dataset) -> Result<f64> {
    let n = data.len();
    let p = data.schema().len() + 2;
    let y = DVector::from_vec(data.responses());
    let sample_sd = || {
        let mean = y.mean();
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64).sqrt()
    };
    if n <= p {
        return Ok(sample_sd());
    }
    let x = DMatrix::from_fn(n, p, |i, j| {
        let obs = &data.observations()[i];
        match j {
            0 => 1.0,
            1 => obs.t,
            _ => obs.x[j - 2],
        }
    });
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * max_sv {
        return Ok(sample_sd());
    }
    let beta = svd
        .solve(&y, 1e-12 * max_sv)
        .map_err(|e| PsbartError::IllConditioned(e.to_string()))?;
    let resid = &y - &x * beta;
    let sigma = (resid.norm_squared() / (n - p) as f64).sqrt();
    if sigma > 0.0 && sigma.is_finite() {
        Ok(sigma)
    } else {
        Ok(sample_sd())
    }
}

/// `lambda` with `P(sigma^2 < sigma_hat^2) = 0.9` under the prior.
pub fn calibrate_lambda(data: &Dataset, nu: f64) -> Result<f64> {
    let sigma_hat = linear_fit_sigma(data)?;
    let chi = ChiSquaredDist::new(nu).map_err(|e| PsbartError::InvalidInput(e.to_string()))?;
    let lambda = sigma_hat * sigma_hat * chi.inverse_cdf(0.1) / nu;
    if lambda > 0.0 && lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(PsbartError::DegenerateScale(format!(
            "cannot calibrate sigma prior from sigma_hat = {sigma_hat}"
        )))
    }
}

/// Full MCMC state on the model scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub ensemble: Ensemble,
    pub sigma2: f64,
    /// Imputed true responses; equal to `y_obs` where `gamma = 0`.
    pub y_latent: Vec<f64>,
}

/// Redraws the latent response of each coarsened observation from
/// `N(fit_i, sigma^2)` truncated to `[y_obs - c/2, y_obs + c/2)`.
pub fn impute_latent<R: Rng + ?Sized>(
    state: &mut ModelState,
    fit: &[f64],
    data: &Dataset,
    rng: &mut R,
) {
    let Some(c) = data.coarsening_width() else {
        return;
    };
    let sd = state.sigma2.sqrt();
    for (i, obs) in data.observations().iter().enumerate() {
        if obs.gamma {
            state.y_latent[i] =
                sample_truncated_normal(fit[i], sd, obs.y_obs - 0.5 * c, obs.y_obs + 0.5 * c, rng);
        }
    }
}

/// Draw from the full conditional
/// `scaled-inv-chi2(nu + n, (nu lambda + SS) / (nu + n))`.
pub fn update_sigma2<R: Rng + ?Sized>(prior: &ScaledInvChi2, residuals: &[f64], rng: &mut R) -> f64 {
    let n = residuals.len() as f64;
    let ss: f64 = residuals.iter().map(|r| r * r).sum();
    let post = ScaledInvChi2 {
        nu: prior.nu + n,
        lambda: (prior.nu * prior.lambda + ss) / (prior.nu + n),
    };
    post.sample(rng)
}

/// Accept/propose counters for structure moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub proposed: u64,
    pub accepted: u64,
}

/// Single-chain backfitting sampler over a dataset on the model scale.
pub struct Sampler {
    data: Dataset,
    design: Design,
    kernel: GpKernel,
    settings: ModelSettings,
    state: ModelState,
    tree_fits: Vec<Vec<f64>>,
    fit: Vec<f64>,
    residual: Vec<f64>,
    rng: ChaCha8Rng,
    moves: MoveCounts,
}

impl Sampler {
    /// Root-only zero trees, `sigma^2` at the sample variance of `y_obs`,
    /// latent responses at `y_obs`.
    pub fn new(data: Dataset, settings: ModelSettings, rng: ChaCha8Rng) -> Result<Self> {
        if data.is_empty() {
            return Err(PsbartError::InvalidInput("dataset is empty".into()));
        }
        if settings.gp.mesh != *data.mesh() {
            return Err(PsbartError::Mesh("GP mesh differs from dataset mesh".into()));
        }
        let kernel = GpKernel::new(settings.gp.clone())?;
        let design = Design::from_dataset(&data);
        let n = data.len();
        let y = data.responses();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        let sigma2 = if var > 0.0 { var } else { settings.sigma_prior.lambda };
        let t_len = data.mesh().len();
        let state = ModelState {
            ensemble: Ensemble::zeros(settings.m, t_len),
            sigma2,
            y_latent: y,
        };
        Ok(Self {
            tree_fits: vec![vec![0.0; n]; settings.m],
            fit: vec![0.0; n],
            residual: vec![0.0; n],
            data,
            design,
            kernel,
            settings,
            state,
            rng,
            moves: MoveCounts::default(),
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    /// Current `f(t_i, x_i)` for every observation.
    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn move_counts(&self) -> MoveCounts {
        self.moves
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn kernel(&self) -> &GpKernel {
        &self.kernel
    }

    /// Replaces the whole model state, recomputing cached fits.
    pub fn set_state(&mut self, state: ModelState) -> Result<()> {
        if state.ensemble.m() != self.settings.m || state.y_latent.len() != self.data.len() {
            return Err(PsbartError::InvalidInput("state does not match sampler dimensions".into()));
        }
        self.tree_fits = state.ensemble.trees.iter().map(|t| self.design.tree_fit(t)).collect();
        self.fit = vec![0.0; self.data.len()];
        for tf in &self.tree_fits {
            for (f, v) in self.fit.iter_mut().zip(tf) {
                *f += v;
            }
        }
        self.state = state;
        Ok(())
    }

    /// Replaces the observed responses (and latent values) wholesale.
    pub fn set_responses(&mut self, y: &[f64]) -> Result<()> {
        self.data = self.data.with_responses(y)?;
        self.state.y_latent = y.to_vec();
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        if self.settings.impute {
            impute_latent(&mut self.state, &self.fit, &self.data, &mut self.rng);
        }

        let n = self.data.len();
        for j in 0..self.settings.m {
            for i in 0..n {
                self.residual[i] = self.state.y_latent[i] - self.fit[i] + self.tree_fits[j][i];
            }
            let ctx = MoveContext {
                design: &self.design,
                residuals: &self.residual,
                prior: &self.settings.tree_prior,
                kernel: &self.kernel,
                sigma2: self.state.sigma2,
            };
            let tree = &mut self.state.ensemble.trees[j];
            let outcome = propose_move(tree, &ctx, &mut self.rng)?;
            self.moves.proposed += 1;
            self.moves.accepted += u64::from(outcome.accepted);
            refresh_leaves(tree, &ctx, &mut self.rng)?;
            let new_fit = self.design.tree_fit(tree);
            for i in 0..n {
                self.fit[i] += new_fit[i] - self.tree_fits[j][i];
            }
            self.tree_fits[j] = new_fit;
        }

        for i in 0..n {
            self.residual[i] = self.state.y_latent[i] - self.fit[i];
        }
        self.state.sigma2 = update_sigma2(&self.settings.sigma_prior, &self.residual, &mut self.rng);
        if !(self.state.sigma2 > 0.0) || !self.state.sigma2.is_finite() {
            return Err(PsbartError::IllConditioned(format!(
                "sigma2 draw {} is not positive and finite",
                self.state.sigma2
            )));
        }
        Ok(())
    }
}

/// Row-major store of posterior draws on a prediction grid of every mesh
/// point for each profile.
///
/// Column `p * T + j` of row `s` holds draw `s` of `f(t_j, profiles[p].x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub mesh: Vec<f64>,
    pub profiles: Vec<Profile>,
    pub n_draws: usize,
    pub f: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub latent: Option<LatentDraws>,
    /// Whether `f` has been projected onto non-decreasing curves.
    pub projected: bool,
}

/// Imputed responses of the coarsened rows, `n_draws x rows.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDraws {
    pub rows: Vec<usize>,
    pub values: Vec<f64>,
}

impl PosteriorDraws {
    pub fn t_len(&self) -> usize {
        self.mesh.len()
    }

    pub fn n_profiles(&self) -> usize {
        self.profiles.len()
    }

    pub fn n_cols(&self) -> usize {
        self.t_len() * self.n_profiles()
    }

    pub fn row(&self, draw: usize) -> &[f64] {
        let w = self.n_cols();
        &self.f[draw * w..(draw + 1) * w]
    }

    pub fn curve(&self, draw: usize, profile: usize) -> &[f64] {
        let t = self.t_len();
        let start = draw * self.n_cols() + profile * t;
        &self.f[start..start + t]
    }

    /// Pointwise posterior mean curve for one profile.
    pub fn mean_curve(&self, profile: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.t_len()];
        for s in 0..self.n_draws {
            for (o, v) in out.iter_mut().zip(self.curve(s, profile)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.n_draws as f64);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(PsbartError::Layout("no draws".into()));
        }
        if self.f.len() != self.n_draws * self.n_cols() {
            return Err(PsbartError::Layout(format!(
                "{} values for {} draws x {} profiles x {} mesh points",
                self.f.len(),
                self.n_draws,
                self.n_profiles(),
                self.t_len()
            )));
        }
        if self.sigma2.len() != self.n_draws {
            return Err(PsbartError::Layout("sigma2 length differs from draw count".into()));
        }
        if let Some(l) = &self.latent {
            if l.values.len() != self.n_draws * l.rows.len() {
                return Err(PsbartError::Layout("latent draws have the wrong size".into()));
            }
        }
        if self.f.iter().any(|v| !v.is_finite()) {
            return Err(PsbartError::Layout("non-finite draw".into()));
        }
        Ok(())
    }

    /// Index of the profile whose covariates equal `x` exactly.
    pub fn find_profile(&self, x: &[f64]) -> Option<usize> {
        self.profiles.iter().position(|p| p.x == x)
    }
}

/// Output of [`run_mcmc`]: draws on the raw scale plus what was resolved.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub draws: PosteriorDraws,
    pub settings: ModelSettings,
    pub standardization: Standardization,
    pub moves: MoveCounts,
}

/// RNG for chain `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Runs one chain and returns draws of `f` over every mesh point for each
/// profile, on the raw response scale.
pub fn run_mcmc(data: &Dataset, cfg: &SamplerConfig, profiles: &[Profile]) -> Result<FitOutput> {
    run_chain(data, cfg, profiles, 0)
}

fn run_chain(
    data: &Dataset,
    cfg: &SamplerConfig,
    profiles: &[Profile],
    chain: u64,
) -> Result<FitOutput> {
    cfg.validate()?;
    let p = data.schema().len();
    if let Some(bad) = profiles.iter().find(|pr| pr.x.len() != p) {
        return Err(PsbartError::Schema(format!(
            "profile `{}` has {} covariates, data has {p}",
            bad.label,
            bad.x.len()
        )));
    }
    let (scaled, standardization) = standardize_response(data)?;
    let settings = ModelSettings::resolve(cfg, &scaled)?;
    let mut sampler = Sampler::new(scaled, settings.clone(), chain_rng(cfg.seed, chain))?;

    let t_len = data.mesh().len();
    let coarse_rows: Vec<usize> = data
        .observations()
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.gamma.then_some(i))
        .collect();
    let mut f = Vec::with_capacity(cfg.n_save * profiles.len() * t_len);
    let mut sigma2 = Vec::with_capacity(cfg.n_save);
    let mut latent = Vec::with_capacity(cfg.n_save * coarse_rows.len());

    let total = cfg.n_burn + cfg.n_save * cfg.thin;
    for iteration in 0..total {
        sampler.step().map_err(|e| PsbartError::Iteration {
            iteration,
            source: Box::new(e),
        })?;
        if iteration < cfg.n_burn || (iteration - cfg.n_burn + 1) % cfg.thin != 0 {
            continue;
        }
        let state = sampler.state();
        for profile in profiles {
            let curve = state.ensemble.curve(t_len, &profile.x);
            f.extend(curve.into_iter().map(|v| standardization.invert(v)));
        }
        sigma2.push(standardization.invert_variance(state.sigma2));
        // Undoing the standardization can land an ulp outside the raw bin.
        let c = data.coarsening_width().unwrap_or(0.0);
        latent.extend(coarse_rows.iter().map(|&i| {
            let y = data.observations()[i].y_obs;
            clamp_half_open(standardization.invert(state.y_latent[i]), y - 0.5 * c, y + 0.5 * c)
        }));
    }

    let draws = PosteriorDraws {
        mesh: data.mesh().values().to_vec(),
        profiles: profiles.to_vec(),
        n_draws: cfg.n_save,
        f,
        sigma2,
        latent: (!coarse_rows.is_empty()).then_some(LatentDraws {
            rows: coarse_rows,
            values: latent,
        }),
        projected: false,
    };
    draws.validate()?;
    Ok(FitOutput {
        draws,
        settings,
        standardization,
        moves: sampler.move_counts(),
    })
}

/// Independent chains in parallel; chain `k` uses stream `k` of the seed,
/// so chain 0 reproduces [`run_mcmc`].
pub fn run_chains(
    data: &Dataset,
    cfg: &SamplerConfig,
    profiles: &[Profile],
    n_chains: usize,
) -> Result<Vec<FitOutput>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|chain| run_chain(data, cfg, profiles, chain))
        .collect()
}

/// Concatenates the draws of several chains on the same grid.
pub fn pool_draws(chains: &[PosteriorDraws]) -> Result<PosteriorDraws> {
    let first = chains
        .first()
        .ok_or_else(|| PsbartError::InvalidInput("no chains to pool".into()))?;
    let mut out = first.clone();
    for other in &chains[1..] {
        if other.mesh != first.mesh || other.profiles != first.profiles {
            return Err(PsbartError::Layout("chains use different grids".into()));
        }
        out.f.extend_from_slice(&other.f);
        out.sigma2.extend_from_slice(&other.sigma2);
        out.n_draws += other.n_draws;
        match (&mut out.latent, &other.latent) {
            (Some(a), Some(b)) if a.rows == b.rows => a.values.extend_from_slice(&b.values),
            (None, None) => {}
            _ => return Err(PsbartError::Layout("chains have different latent rows".into())),
        }
    }
    Ok(out)
}
