//! Weighted isotonic regression by pool-adjacent-violators, and its use as a
//! projection of posterior curve draws onto non-decreasing functions.

use crate::error::{PsbartError, Result};
use crate::sampler::PosteriorDraws;

/// Non-decreasing `w` minimizing `sum_i weights[i] * (values[i] - w[i])^2`.
///
/// Runs in `O(len)` using a stack of pooled blocks.
pub fn pava(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(PsbartError::InvalidInput("PAVA needs at least one value".into()));
    }
    if values.len() != weights.len() {
        return Err(PsbartError::InvalidInput(format!(
            "{} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(PsbartError::InvalidInput(format!("PAVA weight {w} is not positive")));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(PsbartError::InvalidInput(format!("PAVA value {v} is not finite")));
    }

    // (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut block = (v, w, 1);
        while let Some(&(prev_mean, prev_w, prev_len)) = blocks.last() {
            if prev_mean <= block.0 {
                break;
            }
            blocks.pop();
            let total = prev_w + block.1;
            block = (
                (prev_mean * prev_w + block.0 * block.1) / total,
                total,
                prev_len + block.2,
            );
        }
        blocks.push(block);
    }

    let mut out = Vec::with_capacity(values.len());
    for (mean, _, len) in blocks {
        out.extend(std::iter::repeat_n(mean, len));
    }
    Ok(out)
}

/// Unit-weight PAVA.
pub fn isotonic(values: &[f64]) -> Result<Vec<f64>> {
    pava(values, &vec![1.0; values.len()])
}

/// Replaces every curve draw by its isotonic projection.
pub fn project_draws(draws: &mut PosteriorDraws) -> Result<()> {
    draws.validate()?;
    let t = draws.t_len();
    let weights = vec![1.0; t];
    for curve in draws.f.chunks_mut(t) {
        let projected = pava(curve, &weights)?;
        curve.copy_from_slice(&projected);
    }
    draws.projected = true;
    Ok(())
}

/// Whether `values` is non-decreasing up to `tol`.
pub fn is_non_decreasing(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}
