use std::cmp::Ordering;

use crate::error::{PsbartError, Result};

fn check(n_train: usize, n_y: usize, k: usize) -> Result<()> {
    if n_train == 0 {
        return Err(PsbartError::InvalidInput("k-NN needs training data".into()));
    }
    if n_train != n_y {
        return Err(PsbartError::InvalidInput(format!(
            "{n_train} training inputs but {n_y} responses"
        )));
    }
    if k == 0 || k > n_train {
        return Err(PsbartError::InvalidInput(format!(
            "k = {k} must be in 1..={n_train}"
        )));
    }
    Ok(())
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// One-dimensional k-NN regression: each prediction averages the `k`
/// training responses nearest in `|x - x'|`, ties going to the lower
/// training index.
pub fn knn_fit_predict(train_x: &[f64], train_y: &[f64], test_x: &[f64], k: usize) -> Result<Vec<f64>> {
    check(train_x.len(), train_y.len(), k)?;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    order.sort_by(|&a, &b| train_x[a].total_cmp(&train_x[b]).then(a.cmp(&b)));
    let xs: Vec<f64> = order.iter().map(|&i| train_x[i]).collect();

    let mut candidates = Vec::with_capacity(2 * k);
    Ok(test_x
        .iter()
        .map(|&q| {
            // Merge the two sides outward in non-decreasing distance, then
            // pull in every further point tied with the k-th distance.
            let start = xs.partition_point(|&v| v < q);
            let mut cursor = Cursor { lo: start, hi: start };
            candidates.clear();
            for _ in 0..k {
                cursor.advance(&xs, &order, q, None, &mut candidates);
            }
            let kth = candidates.last().map_or(0.0, |c| c.0);
            while cursor.advance(&xs, &order, q, Some(kth), &mut candidates) {}
            candidates.sort_by(by_distance_then_index);
            candidates[..k].iter().map(|&(_, i)| train_y[i]).sum::<f64>() / k as f64
        })
        .collect())
}

struct Cursor {
    lo: usize,
    hi: usize,
}

impl Cursor {
    /// Takes the nearer of the two frontier points unless it lies beyond
    /// `limit`; returns whether a point was taken.
    fn advance(
        &mut self,
        xs: &[f64],
        order: &[usize],
        q: f64,
        limit: Option<f64>,
        out: &mut Vec<(f64, usize)>,
    ) -> bool {
        let left = (self.lo > 0).then(|| q - xs[self.lo - 1]);
        let right = (self.hi < xs.len()).then(|| xs[self.hi] - q);
        let (d, pick_left) = match (left, right) {
            (Some(l), Some(r)) if l <= r => (l, true),
            (Some(l), None) => (l, true),
            (_, Some(r)) => (r, false),
            (None, None) => return false,
        };
        if limit.is_some_and(|lim| d > lim) {
            return false;
        }
        if pick_left {
            self.lo -= 1;
            out.push((d, order[self.lo]));
        } else {
            out.push((d, order[self.hi]));
            self.hi += 1;
        }
        true
    }
}

/// Multivariate k-NN regression by Euclidean distance, with the same tie
/// rule as [`knn_fit_predict`].
pub fn knn_predict(train_x: &[Vec<f64>], train_y: &[f64], test_x: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    check(train_x.len(), train_y.len(), k)?;
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train_x.len());
    Ok(test_x
        .iter()
        .map(|q| {
            dist.clear();
            dist.extend(train_x.iter().enumerate().map(|(i, x)| {
                (x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
            }));
            dist.select_nth_unstable_by(k - 1, by_distance_then_index);
            dist[..k].iter().map(|&(_, i)| train_y[i]).sum::<f64>() / k as f64
        })
        .collect())
}

/// RMSE against `truth` of the best k-NN fit over `ks`, with every feature
/// rescaled to the unit interval by its training range. Returns `(k, rmse)`.
pub fn oracle_knn_rmse(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    eval_x: &[Vec<f64>],
    truth: &[f64],
    ks: &[usize],
) -> Result<(usize, f64)> {
    let p = train_x.first().map_or(0, Vec::len);
    let ranges: Vec<(f64, f64)> = (0..p)
        .map(|j| {
            let (lo, hi) = train_x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[j]), hi.max(x[j])));
            (lo, if hi > lo { hi - lo } else { 1.0 })
        })
        .collect();
    let scale = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|x| x.iter().zip(&ranges).map(|(v, (lo, w))| (v - lo) / w).collect())
            .collect()
    };
    let (train_s, eval_s) = (scale(train_x), scale(eval_x));
    let mut best: Option<(usize, f64)> = None;
    for &k in ks.iter().filter(|&&k| k >= 1 && k <= train_x.len()) {
        let pred = knn_predict(&train_s, train_y, &eval_s, k)?;
        let mse = pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
        let rmse = mse.sqrt();
        if best.is_none_or(|(_, b)| rmse < b) {
            best = Some((k, rmse));
        }
    }
    best.ok_or_else(|| PsbartError::InvalidInput("no admissible k".into()))
}
