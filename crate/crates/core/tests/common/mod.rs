#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = n * m / (n + m);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// `Q_KS(x) = 2 sum_k (-1)^(k-1) exp(-2 k^2 x^2)`.
fn kolmogorov_q(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `log N(y; 0, sigma2 I + Z K Z^T)` with `Z` the 0/1 map from rows to mesh
/// indices, evaluated directly on the `n x n` covariance.
pub fn dense_marginal_loglik(k: &DMatrix<f64>, t_index: &[usize], y: &[f64], sigma2: f64) -> f64 {
    let n = y.len();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        k[(t_index[i], t_index[j])] + if i == j { sigma2 } else { 0.0 }
    });
    let chol = cov.cholesky().expect("positive definite");
    let y = DVector::from_column_slice(y);
    let alpha = chol.solve(&y);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + y.dot(&alpha))
}

/// Weighted isotonic fit by exhaustive search over block partitions.
pub fn brute_force_isotonic(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut fit = Vec::with_capacity(n);
        let mut start = 0;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let sw: f64 = w[start..end].iter().sum();
                let m: f64 = (start..end).map(|i| y[i] * w[i]).sum::<f64>() / sw;
                fit.extend(std::iter::repeat_n(m, end - start));
                start = end;
            }
        }
        if fit.windows(2).any(|p| p[1] < p[0]) {
            continue;
        }
        let obj = weighted_sse(y, w, &fit);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, fit));
        }
    }
    best.expect("constant fit is always feasible").1
}

pub fn weighted_sse(y: &[f64], w: &[f64], fit: &[f64]) -> f64 {
    y.iter().zip(w).zip(fit).map(|((y, w), f)| w * (y - f).powi(2)).sum()
}

fn std_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

fn upper_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Mean and variance of `N(mean, sd^2)` truncated to `[low, high)`.
pub fn truncated_moments(mean: f64, sd: f64, low: f64, high: f64) -> (f64, f64) {
    let a = (low - mean) / sd;
    let b = (high - mean) / sd;
    let z = if a >= 0.0 {
        upper_tail(a) - upper_tail(b)
    } else if b <= 0.0 {
        upper_tail(-b) - upper_tail(-a)
    } else {
        1.0 - upper_tail(-a) - upper_tail(b)
    };
    let xp = |x: f64| if x.is_infinite() { 0.0 } else { x * std_pdf(x) };
    let m = (std_pdf(a) - std_pdf(b)) / z;
    let v = 1.0 + (xp(a) - xp(b)) / z - m * m;
    (mean + sd * m, sd * sd * v)
}

/// Sample mean, unbiased variance, and their standard errors.
pub fn sample_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (mean, var, (var / n).sqrt(), ((m4 - var * var) / n).sqrt())
}
