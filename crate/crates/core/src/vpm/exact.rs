//! Closed-form inner minimization for tabular models over the full dataset.
//!
//! With a table of free values the damped penalized objective is a separable
//! quadratic plus a rank-one penalty:
//! `1/2 sum_i P_i tau_i^2 - sum_i b_i tau_i + lambda (sum_i P_i tau_i - 1)^2`
//! where `P` is the x-column frequency and
//! `b = (1 - a) P tau_t + a (gamma C + (1 - gamma) M0)`, `C_j` being the
//! reference mass flowing into `j` and `M0` the initial-pool frequency.
//! Stationarity gives `tau = b / P - 2 lambda (s - 1)` with
//! `s = (sum_{P>0} b + 2 lambda) / (1 + 2 lambda)` and the dual optimum
//! `v = s - 1`.

use crate::data::TransitionDataset;
use crate::models::RatioModel;
use crate::{Error, Result};

/// Values below this are clamped so the softplus head can represent them.
pub const MIN_VALUE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ExactSolver {
    states: usize,
    /// Distinct `(x, x')` index pairs with their data frequency.
    pairs: Vec<(usize, usize, f64)>,
    probe: Vec<f64>,
    init: Vec<f64>,
}

/// Result of one exact inner solve.
#[derive(Debug, Clone)]
pub struct ExactStep {
    pub tau: Vec<f64>,
    pub v: f64,
    pub objective: f64,
    pub mean_tau: f64,
}

impl ExactSolver {
    pub fn new(model: &RatioModel, ds: &TransitionDataset, init_points: Option<&[f64]>) -> Result<Self> {
        let states = model.param_count();
        let idx_x = model.tabular_indices(ds.xs())?;
        let idx_xp = model.tabular_indices(ds.xps())?;
        let n = idx_x.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        let mut probe = vec![0.0; states];
        for &i in &idx_x {
            probe[i] += 1.0;
        }
        probe.iter_mut().for_each(|c| *c /= n as f64);
        let mut sorted: Vec<(usize, usize)> = idx_x.iter().copied().zip(idx_xp.iter().copied()).collect();
        sorted.sort_unstable();
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j) in sorted {
            match pairs.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += 1.0,
                _ => pairs.push((i, j, 1.0)),
            }
        }
        pairs.iter_mut().for_each(|p| p.2 /= n as f64);
        let mut init = vec![0.0; states];
        if let Some(points) = init_points {
            let idx = model.tabular_indices(points)?;
            if idx.is_empty() {
                return Err(Error::Empty);
            }
            for &i in &idx {
                init[i] += 1.0;
            }
            let m = idx.len() as f64;
            init.iter_mut().for_each(|c| *c /= m);
        }
        Ok(ExactSolver {
            states,
            pairs,
            probe,
            init,
        })
    }

    pub fn probe(&self) -> &[f64] {
        &self.probe
    }

    /// Minimizes the objective for reference values `tau_t`, damping `alpha`
    /// and discount `gamma` (1 for the undiscounted objective).
    pub fn solve(&self, tau_t: &[f64], alpha: f64, gamma: f64, lambda: f64) -> Result<ExactStep> {
        if tau_t.len() != self.states {
            return Err(Error::LengthMismatch {
                what: "reference values",
                expected: self.states,
                found: tau_t.len(),
            });
        }
        let mut inflow = vec![0.0; self.states];
        for &(i, j, w) in &self.pairs {
            inflow[j] += tau_t[i] * w;
        }
        let b: Vec<f64> = (0..self.states)
            .map(|i| {
                (1.0 - alpha) * self.probe[i] * tau_t[i]
                    + alpha * (gamma * inflow[i] + (1.0 - gamma) * self.init[i])
            })
            .collect();
        let covered: f64 = b.iter().zip(&self.probe).filter(|(_, &p)| p > 0.0).map(|(b, _)| b).sum();
        let s = (covered + 2.0 * lambda) / (1.0 + 2.0 * lambda);
        let shift = 2.0 * lambda * (s - 1.0);
        let tau: Vec<f64> = (0..self.states)
            .map(|i| {
                if self.probe[i] > 0.0 {
                    (b[i] / self.probe[i] - shift).max(MIN_VALUE)
                } else {
                    tau_t[i]
                }
            })
            .collect();
        let v = s - 1.0;
        let mean_tau: f64 = tau.iter().zip(&self.probe).map(|(t, p)| t * p).sum();
        let quad: f64 = (0..self.states)
            .map(|i| 0.5 * self.probe[i] * tau[i] * tau[i] - b[i] * tau[i])
            .sum();
        let objective = quad + lambda * (2.0 * v * (mean_tau - 1.0) - v * v);
        if !objective.is_finite() {
            return Err(Error::NonFiniteTerm {
                term: "exact objective",
                step: 0,
            });
        }
        Ok(ExactStep {
            tau,
            v,
            objective,
            mean_tau,
        })
    }
}
