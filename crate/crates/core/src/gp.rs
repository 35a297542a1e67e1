//! Squared-exponential Gaussian-process algebra over the target mesh.
//!
//! Leaf functions are vectors of length `T` with prior `N(0, K)`, where
//! `K[i][j] = tau2 * exp(-(t_i - t_j)^2 / (2 theta^2))` plus a small diagonal
//! jitter. Observations in a leaf only enter through per-mesh-point counts
//! and residual sums, so every computation here is `T x T`, never `n x n`.
//!
//! With `S = diag(sqrt(n_j) / sigma)` and `z_j = sum_j / (sigma sqrt(n_j))`
//! the leaf likelihood is equivalent to `z = S mu + e`, `e ~ N(0, I)`. All
//! conjugate quantities are then expressed through `M = I + S K S`, whose
//! eigenvalues are bounded below by one, so `K` itself is never inverted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TargetMesh;
use crate::error::{PsbartError, Result};

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Correlation between adjacent mesh points under the default length-scale.
pub const DEFAULT_ADJACENT_CORRELATION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Length-scale of the squared-exponential kernel.
    pub theta: f64,
    /// Prior variance of each leaf function.
    pub tau2: f64,
    pub mesh: TargetMesh,
}

impl GpConfig {
    pub fn new(theta: f64, tau2: f64, mesh: TargetMesh) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(PsbartError::InvalidInput(format!(
                "theta must be positive, got {theta}"
            )));
        }
        if !(tau2 > 0.0) || !tau2.is_finite() {
            return Err(PsbartError::InvalidInput(format!(
                "tau2 must be positive, got {tau2}"
            )));
        }
        Ok(Self { theta, tau2, mesh })
    }

    /// Defaults for an ensemble of `m` trees: adjacent-point correlation
    /// 0.95 and leaf scale `(0.5 / (2 sqrt(m)))^2`.
    pub fn with_defaults(mesh: TargetMesh, m: usize) -> Self {
        Self {
            theta: default_theta(&mesh),
            tau2: default_tau2(m),
            mesh,
        }
    }
}

/// Length-scale giving correlation 0.95 between the closest mesh points.
pub fn default_theta(mesh: &TargetMesh) -> f64 {
    mesh.min_spacing() / (2.0 * (1.0 / DEFAULT_ADJACENT_CORRELATION).ln()).sqrt()
}

/// Leaf variance so that the sum of `m` leaves has prior SD 0.25.
pub fn default_tau2(m: usize) -> f64 {
    let k = 2.0;
    let sd = 0.5 / (k * (m.max(1) as f64).sqrt());
    sd * sd
}

/// Values of one leaf function at every mesh point.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafFunction(pub Vec<f64>);

impl LeafFunction {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, t_index: usize) -> f64 {
        self.0[t_index]
    }
}

/// Per-mesh-point residual summaries for the observations in one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafStats {
    pub counts: Vec<usize>,
    pub sums: Vec<f64>,
    pub sum_sq: f64,
}

impl LeafStats {
    pub fn empty(t_len: usize) -> Self {
        Self {
            counts: vec![0; t_len],
            sums: vec![0.0; t_len],
            sum_sq: 0.0,
        }
    }

    pub fn push(&mut self, t_index: usize, residual: f64) {
        self.counts[t_index] += 1;
        self.sums[t_index] += residual;
        self.sum_sq += residual * residual;
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn merged(&self, other: &LeafStats) -> LeafStats {
        LeafStats {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            sums: self.sums.iter().zip(&other.sums).map(|(a, b)| a + b).collect(),
            sum_sq: self.sum_sq + other.sum_sq,
        }
    }
}

/// Gaussian posterior of a leaf function given its residuals.
#[derive(Debug, Clone)]
pub struct LeafPosterior {
    pub mean: DVector<f64>,
    /// Lower-triangular `L` with `L L^T` equal to the posterior covariance.
    pub chol_cov: DMatrix<f64>,
}

/// Kernel matrix for a config together with its cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct GpKernel {
    config: GpConfig,
    k: DMatrix<f64>,
    chol: DMatrix<f64>,
    jitter: f64,
}

/// Adds diagonal jitter starting at `1e-8 * scale`, escalating tenfold up to
/// `1e-4 * scale`, until the Cholesky factorization succeeds.
fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok((ch.l(), jitter));
        }
        rel *= 10.0;
    }
    Err(PsbartError::IllConditioned(format!(
        "Cholesky failed with jitter up to {:e}",
        JITTER_MAX * scale
    )))
}

/// Squared-exponential kernel matrix including the jitter that made it
/// factorizable.
pub fn kernel_matrix(cfg: &GpConfig) -> Result<DMatrix<f64>> {
    Ok(GpKernel::new(cfg.clone())?.k)
}

/// Draw from the GP prior defined by `cfg`.
pub fn sample_prior_leaf<R: Rng + ?Sized>(cfg: &GpConfig, rng: &mut R) -> Result<LeafFunction> {
    Ok(GpKernel::new(cfg.clone())?.sample_prior(rng))
}

impl GpKernel {
    pub fn new(config: GpConfig) -> Result<Self> {
        let t = config.mesh.values();
        let len = t.len();
        let denom = 2.0 * config.theta * config.theta;
        let raw = DMatrix::from_fn(len, len, |i, j| {
            let d = t[i] - t[j];
            config.tau2 * (-(d * d) / denom).exp()
        });
        let (chol, jitter) = cholesky_with_jitter(&raw, config.tau2)?;
        let mut k = raw;
        for i in 0..len {
            k[(i, i)] += jitter;
        }
        Ok(Self {
            config,
            k,
            chol,
            jitter,
        })
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> LeafFunction {
        let z = standard_normals(self.len(), rng);
        LeafFunction((&self.chol * z).iter().copied().collect())
    }

    fn check(&self, stats: &LeafStats, sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(PsbartError::InvalidInput(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        if stats.counts.len() != self.len() || stats.sums.len() != self.len() {
            return Err(PsbartError::InvalidInput(format!(
                "leaf statistics have length {}, mesh has {}",
                stats.counts.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `(s, z, chol(I + S K S))` for the leaf.
    fn whitened(
        &self,
        stats: &LeafStats,
        sigma2: f64,
    ) -> Result<(DVector<f64>, DVector<f64>, Cholesky<f64, Dyn>)> {
        let sigma = sigma2.sqrt();
        let len = self.len();
        let s = DVector::from_fn(len, |j, _| (stats.counts[j] as f64).sqrt() / sigma);
        let z = DVector::from_fn(len, |j, _| {
            let n = stats.counts[j];
            if n == 0 {
                0.0
            } else {
                stats.sums[j] / (sigma * (n as f64).sqrt())
            }
        });
        let m = DMatrix::from_fn(len, len, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id + s[i] * self.k[(i, j)] * s[j]
        });
        let chol = Cholesky::new(m).ok_or_else(|| {
            PsbartError::IllConditioned("leaf system I + S K S is not positive definite".into())
        })?;
        Ok((s, z, chol))
    }

    /// Posterior of the leaf function given per-mesh-point counts and
    /// residual sums: precision `K^-1 + diag(counts) / sigma2`.
    pub fn conjugate_posterior(&self, stats: &LeafStats, sigma2: f64) -> Result<LeafPosterior> {
        self.check(stats, sigma2)?;
        let len = self.len();
        if stats.n() == 0 {
            return Ok(LeafPosterior {
                mean: DVector::zeros(len),
                chol_cov: self.chol.clone(),
            });
        }
        let (s, z, chol_m) = self.whitened(stats, sigma2)?;
        let v = chol_m.solve(&z);
        let mean = &self.k * s.component_mul(&v);

        // cov = K - (S K)^T M^-1 (S K) = K - W^T W with W = L_M^-1 S K.
        let mut sk = self.k.clone();
        for i in 0..len {
            sk.row_mut(i).scale_mut(s[i]);
        }
        let w = chol_m
            .l_dirty()
            .solve_lower_triangular(&sk)
            .ok_or_else(|| PsbartError::IllConditioned("singular leaf factor".into()))?;
        let mut cov = &self.k - w.transpose() * w;
        cov = (&cov + cov.transpose()) * 0.5;
        let chol_cov = match Cholesky::new(cov.clone()) {
            Some(ch) => ch.l(),
            None => cholesky_with_jitter(&cov, self.config.tau2)?.0,
        };
        Ok(LeafPosterior { mean, chol_cov })
    }

    /// Draw from [`GpKernel::conjugate_posterior`].
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        stats: &LeafStats,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<LeafFunction> {
        let post = self.conjugate_posterior(stats, sigma2)?;
        let z = standard_normals(self.len(), rng);
        let draw = post.mean + post.chol_cov * z;
        Ok(LeafFunction(draw.iter().copied().collect()))
    }

    /// `log ∫ N(r | B mu, sigma2 I) N(mu | 0, K) dmu` for the residuals `r`
    /// summarized by `stats`; `B` maps each residual to its mesh point.
    pub fn marginal_loglik(&self, stats: &LeafStats, sigma2: f64) -> Result<f64> {
        self.check(stats, sigma2)?;
        let n = stats.n();
        if n == 0 {
            return Ok(0.0);
        }
        let (_, z, chol_m) = self.whitened(stats, sigma2)?;
        let log_det_m: f64 = 2.0 * chol_m.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let u = chol_m
            .l_dirty()
            .solve_lower_triangular(&z)
            .ok_or_else(|| PsbartError::IllConditioned("singular leaf factor".into()))?;
        // r^T C^-1 r = sum_sq / sigma2 - z^T z + z^T M^-1 z
        let quad = stats.sum_sq / sigma2 - z.norm_squared() + u.norm_squared();
        Ok(-0.5 * n as f64 * (2.0 * std::f64::consts::PI * sigma2).ln()
            - 0.5 * log_det_m
            - 0.5 * quad)
    }
}

fn standard_normals<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}
