//! Ornstein-Uhlenbeck process `dX = theta (mu - X) dt + sigma dW` and its
//! Euler-Maruyama discretization.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub mu: f64,
    pub sigma: f64,
    pub theta: f64,
    pub dt: f64,
}

impl OuParams {
    pub fn new(mu: f64, sigma: f64, theta: f64, dt: f64) -> Result<Self> {
        let op = OuParams { mu, sigma, theta, dt };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma > 0.0) || !(self.theta > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "OU parameters need finite mu and positive sigma, theta, dt; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `sigma^2 / (2 theta)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta)
    }
}

/// `x + theta (mu - x) dt + sigma sqrt(dt) z`.
pub fn ou_em_step<R: Rng + ?Sized>(x: f64, op: &OuParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    x + op.theta * (op.mu - x) * op.dt + op.sigma * op.dt.sqrt() * z
}

/// An exact draw from `N(mu, sigma^2 / (2 theta))`.
pub fn ou_stationary_sampler<R: Rng + ?Sized>(op: &OuParams, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    op.mu + op.stationary_variance().sqrt() * z
}

/// Advances every particle by one EM step in place.
pub fn ou_advance<R: Rng + ?Sized>(particles: &mut [f64], op: &OuParams, rng: &mut R) {
    for x in particles.iter_mut() {
        *x = ou_em_step(*x, op, rng);
    }
}

/// Pairs `(x_k, x_{k+1})` from the given consecutive particle snapshots.
pub fn ou_pairs(before: &[f64], after: &[f64]) -> Result<TransitionDataset> {
    TransitionDataset::from_flat(1, before.to_vec(), after.to_vec(), None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn noiseless_fixed_point_and_contraction() {
        let mut rng = seeded_rng(0);
        let op = OuParams {
            mu: 2.0,
            sigma: 0.0,
            theta: 2.0,
            dt: 0.1,
        };
        assert_eq!(ou_em_step(2.0, &op, &mut rng), 2.0);
        let x = ou_em_step(5.0, &op, &mut rng);
        assert!(((x - 2.0).abs() - 0.8 * 3.0).abs() < 1e-12);
        assert!(OuParams::new(0.0, 0.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn stationary_sampler_moments() {
        let op = OuParams::new(2.0, 2.0, 2.0, 1e-3).unwrap();
        assert_eq!(op.stationary_variance(), 1.0);
        let mut rng = seeded_rng(1);
        let draws: Vec<f64> = (0..200_000).map(|_| ou_stationary_sampler(&op, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 2.0).abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    /// The EM chain is a linear AR(1) recursion with stationary variance
    /// `sigma^2 dt / (1 - (1 - theta dt)^2)`, so the error to the continuous
    /// value shrinks with `dt`.
    #[test]
    fn em_variance_converges_as_dt_shrinks() {
        let mut errors = Vec::new();
        for (k, dt) in [1e-1, 1e-2, 1e-3].into_iter().enumerate() {
            let op = OuParams::new(2.0, 2.0, 2.0, dt).unwrap();
            let a = 1.0 - op.theta * dt;
            let exact = op.sigma * op.sigma * dt / (1.0 - a * a);
            let mut rng = seeded_rng(10 + k as u64);
            let mut particles: Vec<f64> = (0..20_000).map(|_| ou_stationary_sampler(&op, &mut rng)).collect();
            let burn = (5.0 / (op.theta * dt)) as usize;
            for _ in 0..burn {
                ou_advance(&mut particles, &op, &mut rng);
            }
            let mean = particles.iter().sum::<f64>() / particles.len() as f64;
            let var = particles.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / particles.len() as f64;
            assert!((var - exact).abs() < 0.05, "dt {dt}: {var} vs {exact}");
            errors.push((exact - op.stationary_variance()).abs());
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }
}
