//! Discrete-time single-server queue with geometric arrivals and services.
//!
//! Within a slot a customer arrives with probability `q_a`; then, if the
//! queue (arrival included) is nonempty, the customer in service finishes
//! with probability `q_f`. The length is a birth-death chain moving up with
//! probability `q_a (1 - q_f)` and down with `(1 - q_a) q_f`, whose
//! stationary law is geometric, `P(X = i) = (1 - rho) rho^i` with
//! `rho = q_a (1 - q_f) / (q_f (1 - q_a))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::tabular::TabularChain;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub q_a: f64,
    pub q_f: f64,
    /// Probe range: `x ~ Uniform{0, .., bound - 1}`.
    pub bound: usize,
}

impl QueueParams {
    pub fn new(q_a: f64, q_f: f64, bound: usize) -> Result<Self> {
        let qp = QueueParams { q_a, q_f, bound };
        qp.validate()?;
        Ok(qp)
    }

    /// Uses the default probe bound `ceil(40 rho)`.
    pub fn with_default_bound(q_a: f64, q_f: f64) -> Result<Self> {
        let mut qp = QueueParams { q_a, q_f, bound: 2 };
        qp.validate()?;
        qp.bound = default_bound(qp.rho()).max(2);
        Ok(qp)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.q_a) || !unit(self.q_f) {
            return Err(Error::InvalidParameter(format!(
                "queue probabilities must lie in (0, 1), got q_a={} q_f={}",
                self.q_a, self.q_f
            )));
        }
        if self.q_f <= self.q_a {
            return Err(Error::InvalidParameter(format!(
                "unstable queue: q_f={} must exceed q_a={}",
                self.q_f, self.q_a
            )));
        }
        if self.bound < 2 {
            return Err(Error::InvalidParameter("probe bound must be at least 2".into()));
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        rho(self.q_a, self.q_f)
    }

    pub fn up_probability(&self) -> f64 {
        self.q_a * (1.0 - self.q_f)
    }

    pub fn down_probability(&self) -> f64 {
        (1.0 - self.q_a) * self.q_f
    }
}

pub fn rho(q_a: f64, q_f: f64) -> f64 {
    q_a * (1.0 - q_f) / (q_f * (1.0 - q_a))
}

/// `ceil(40 rho)`.
pub fn default_bound(rho: f64) -> usize {
    (40.0 * rho).ceil() as usize
}

/// One slot of the queue. Both draws are always made so the random stream
/// does not depend on the state.
pub fn queue_transition<R: Rng + ?Sized>(x: u64, q_a: f64, q_f: f64, rng: &mut R) -> u64 {
    let arrival = rng.random_bool(q_a);
    let finish = rng.random_bool(q_f);
    let y = x + arrival as u64;
    if y > 0 && finish {
        y - 1
    } else {
        y
    }
}

/// The geometric law restricted to `[0, truncation)` and renormalized.
pub fn queue_stationary(q_a: f64, q_f: f64, truncation: usize) -> Result<Vec<f64>> {
    if !(q_f > q_a) {
        return Err(Error::InvalidParameter(format!(
            "unstable queue: q_f={q_f} must exceed q_a={q_a}"
        )));
    }
    if truncation == 0 {
        return Err(Error::Empty);
    }
    let r = rho(q_a, q_f);
    let mut law: Vec<f64> = (0..truncation).map(|i| (1.0 - r) * r.powi(i as i32)).collect();
    let total: f64 = law.iter().sum();
    law.iter_mut().for_each(|p| *p /= total);
    Ok(law)
}

/// The queue kernel on `[0, states)`; an up move from the top state is
/// reflected (the chain stays put).
pub fn queue_kernel(qp: &QueueParams, states: usize) -> Result<TabularChain> {
    if states < 2 {
        return Err(Error::InvalidParameter("queue kernel needs at least 2 states".into()));
    }
    let up = qp.up_probability();
    let down = qp.down_probability();
    let mut kernel = vec![0.0; states * states];
    for i in 0..states {
        let row = &mut kernel[i * states..(i + 1) * states];
        let mut stay = 1.0;
        if i + 1 < states {
            row[i + 1] = up;
            stay -= up;
        }
        if i > 0 {
            row[i - 1] = down;
            stay -= down;
        }
        row[i] = stay;
    }
    TabularChain::new(states, kernel)
}

/// `n` pairs with `x ~ Uniform{0, .., bound - 1}` and one queue step.
pub fn queue_make_dataset<R: Rng + ?Sized>(qp: &QueueParams, n: usize, rng: &mut R) -> Result<TransitionDataset> {
    qp.validate()?;
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut xs = Vec::with_capacity(n);
    let mut xps = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(0..qp.bound as u64);
        xs.push(x as f64);
        xps.push(queue_transition(x, qp.q_a, qp.q_f, rng) as f64);
    }
    TransitionDataset::from_flat(1, xs, xps, None)
}
