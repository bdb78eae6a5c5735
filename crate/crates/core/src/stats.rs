//! Sample statistics with blocked jackknife standard errors.

use serde::{Deserialize, Serialize};

use crate::conventions::{JACKKNIFE_BLOCK, ZERO_VARIANCE_FLOOR};

/// A Monte Carlo estimate and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    /// Blocked jackknife estimate of the mean.
    pub fn mean(xs: &[f64]) -> Self {
        jackknife(&[xs], |m| m[0])
    }

    /// `|value - target| <= k * stderr` with the zero-variance floor.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr + ZERO_VARIANCE_FLOOR
    }

    pub fn rel_err(&self, target: f64) -> f64 {
        if target == 0.0 {
            self.value.abs()
        } else {
            ((self.value - target) / target).abs()
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let den: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    if den == 0.0 {
        return 0.0;
    }
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    num / den
}

fn block_size(n: usize) -> usize {
    // keep at least two blocks; size 2 keeps antithetic pairs together
    if n >= 2 * JACKKNIFE_BLOCK {
        JACKKNIFE_BLOCK
    } else if n >= 4 {
        2
    } else {
        1
    }
}

/// Delete-one-block jackknife for `f` applied to the column means of `columns`.
///
/// All columns must have the same length (one entry per path). A trailing
/// partial block is merged into the last full block.
pub fn jackknife<F>(columns: &[&[f64]], f: F) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    let n = columns.first().map_or(0, |c| c.len());
    assert!(columns.iter().all(|c| c.len() == n), "ragged columns");
    let k = columns.len();
    let totals: Vec<f64> = columns.iter().map(|c| c.iter().sum()).collect();
    let full: Vec<f64> = totals.iter().map(|t| t / n as f64).collect();
    let value = f(&full);
    let b = block_size(n);
    let n_blocks = n / b.max(1);
    if n_blocks < 2 {
        return Estimate {
            value,
            stderr: f64::NAN,
        };
    }
    let mut replicates = Vec::with_capacity(n_blocks);
    let mut reduced = vec![0.0; k];
    for j in 0..n_blocks {
        let start = j * b;
        let end = if j + 1 == n_blocks { n } else { start + b };
        let kept = (n - (end - start)) as f64;
        for (c, col) in columns.iter().enumerate() {
            let block: f64 = col[start..end].iter().sum();
            reduced[c] = (totals[c] - block) / kept;
        }
        replicates.push(f(&reduced));
    }
    let g = n_blocks as f64;
    let rbar = mean(&replicates);
    let var = (g - 1.0) / g * replicates.iter().map(|r| (r - rbar).powi(2)).sum::<f64>();
    Estimate {
        value,
        stderr: var.sqrt(),
    }
}

/// Standard error of the mean of `a - b` (paired samples).
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Estimate::mean(&d)
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
