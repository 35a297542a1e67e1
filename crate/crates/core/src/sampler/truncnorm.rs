//! Truncated normal draws that stay efficient far into the tails.
//!
//! Uses the mixed rejection scheme of Robert (1995): normal or uniform
//! proposals for intervals straddling the mean, and translated-exponential
//! or uniform proposals for intervals in one tail. Expected iterations are
//! bounded by a small constant for every interval.

use rand::Rng;
use rand_distr::{Exp, StandardNormal};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Draws from `N(mean, sd^2)` restricted to `[low, high)`.
///
/// `sd == 0` returns `mean` clamped into the interval.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    low: f64,
    high: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(low < high, "empty truncation interval");
    let y = if sd > 0.0 {
        let a = (low - mean) / sd;
        let b = (high - mean) / sd;
        mean + sd * standard_truncated(a, b, rng)
    } else {
        mean
    };
    clamp_half_open(y, low, high)
}

pub(crate) fn clamp_half_open(y: f64, low: f64, high: f64) -> f64 {
    if y < low {
        low
    } else if y >= high {
        high.next_down().max(low)
    } else {
        y
    }
}

/// Standard normal restricted to `[a, b)`.
pub fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        one_tail(a, b, rng)
    } else if b <= 0.0 {
        -one_tail(-b, -a, rng)
    } else {
        straddle(a, b, rng)
    }
}

fn straddle<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a >= SQRT_2PI {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= a && z < b {
                return z;
            }
        }
    }
    loop {
        let z = rng.random_range(a..b);
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * z * z {
            return z;
        }
    }
}

/// `0 <= a < b <= inf`.
fn one_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let root = (a * a + 4.0).sqrt();
    let rate = 0.5 * (a + root);
    let uniform_width = (2.0 * std::f64::consts::E.sqrt() / (a + root))
        * ((a * a - a * root) / 4.0).exp();
    if b - a < uniform_width {
        loop {
            let z = rng.random_range(a..b);
            let u: f64 = rng.random();
            if u.ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + rng.sample(exp);
        if z >= b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate) * (z - rate) {
            return z;
        }
    }
}
