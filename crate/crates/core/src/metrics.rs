//! Evaluation statistics: KL divergence, weighted Gaussian-kernel MMD and
//! log mean squared error.

use crate::{Error, Result};

pub const DEFAULT_KL_FLOOR: f64 = 1e-12;

/// A probability vector on `{0, .., S - 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution(Vec<f64>);

impl FiniteDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(i) = p.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                term: "probability",
                index: i,
            });
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(FiniteDistribution(p))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter("weights must have positive finite total".into()));
        }
        Self::new(w.iter().map(|v| v / total).collect())
    }

    /// Empirical law of integer observations in `[0, states)`; values
    /// outside the range are dropped before normalizing.
    pub fn histogram(values: impl IntoIterator<Item = usize>, states: usize) -> Result<Self> {
        let mut counts = vec![0.0; states];
        for v in values {
            if v < states {
                counts[v] += 1.0;
            }
        }
        Self::from_weights(&counts)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `sum_i truth_i ln(truth_i / max(est_i, floor))`, terms with zero truth
/// dropped.
pub fn kl_divergence(truth: &FiniteDistribution, est: &FiniteDistribution, floor: f64) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::LengthMismatch {
            what: "distribution support",
            expected: truth.len(),
            found: est.len(),
        });
    }
    Ok(truth
        .0
        .iter()
        .zip(&est.0)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &e)| t * (t / e.max(floor)).ln())
        .sum())
}

/// `ln(mean_k (e_k - truth)^2)`.
pub fn log_mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty);
    }
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64;
    Ok(mse.ln())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[f64], dim: usize, what: &'static str) -> Result<usize> {
    if dim == 0 || points.is_empty() {
        return Err(Error::Empty);
    }
    if points.len() % dim != 0 {
        return Err(Error::LengthMismatch {
            what,
            expected: (points.len() / dim + 1) * dim,
            found: points.len(),
        });
    }
    Ok(points.len() / dim)
}

/// Median of all nonzero pairwise Euclidean distances in the pooled sample.
pub fn median_pairwise_distance(pooled: &[f64], dim: usize) -> Result<f64> {
    let n = check_points(pooled, dim, "pooled sample")?;
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let a = &pooled[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let s = sq_dist(a, &pooled[j * dim..(j + 1) * dim]);
            if s > 0.0 {
                d.push(s);
            }
        }
    }
    if d.is_empty() {
        return Err(Error::InvalidParameter("all points coincide; bandwidth undefined".into()));
    }
    // The median of squared distances is the square of the median distance;
    // for an even count take the lower middle element on both sides.
    let mid = (d.len() - 1) / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(m.sqrt())
}

/// Weighted kernel mean `sum_ij wa_i wb_j k(a_i, b_j)`.
fn kernel_mean(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64], dim: usize, inv_two_h2: f64) -> f64 {
    let mut total = 0.0;
    for (ai, &wi) in a.chunks_exact(dim).zip(wa) {
        if wi == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (bj, &wj) in b.chunks_exact(dim).zip(wb) {
            row += wj * (-sq_dist(ai, bj) * inv_two_h2).exp();
        }
        total += wi * row;
    }
    total
}

/// Gaussian-kernel MMD between `x` (optionally weighted) and `y`, with
/// bandwidth `h`. Returns the square root of the clamped V-statistic.
pub fn mmd_gaussian_with_bandwidth(x: &[f64], y: &[f64], dim: usize, wx: Option<&[f64]>, h: f64) -> Result<f64> {
    let n = check_points(x, dim, "first sample")?;
    let m = check_points(y, dim, "second sample")?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let uniform_x;
    let wx = match wx {
        Some(w) => {
            if w.len() != n {
                return Err(Error::LengthMismatch {
                    what: "sample weights",
                    expected: n,
                    found: w.len(),
                });
            }
            if let Some(i) = w.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::NonFiniteCoordinate { term: "weight", index: i });
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
            }
            w
        }
        None => {
            uniform_x = vec![1.0 / n as f64; n];
            &uniform_x
        }
    };
    let wy = vec![1.0 / m as f64; m];
    let c = 1.0 / (2.0 * h * h);
    let xx = kernel_mean(x, wx, x, wx, dim, c);
    let xy = kernel_mean(x, wx, y, &wy, dim, c);
    let yy = kernel_mean(y, &wy, y, &wy, dim, c);
    Ok((xx - 2.0 * xy + yy).max(0.0).sqrt())
}

/// Gaussian-kernel MMD with the median heuristic over the pooled sample.
pub fn mmd_gaussian(x: &[f64], y: &[f64], dim: usize, wx: Option<&[f64]>) -> Result<f64> {
    check_points(x, dim, "first sample")?;
    check_points(y, dim, "second sample")?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let h = median_pairwise_distance(&pooled, dim)?;
    mmd_gaussian_with_bandwidth(x, y, dim, wx, h)
}
