//! Two-dimensional target densities on the box `[-6, 6]^2` and a
//! Metropolis-corrected Hamiltonian Monte Carlo transition.
//!
//! Log-densities are unnormalized and clamped below at [`LOG_DENSITY_FLOOR`];
//! the gradient is zero where the clamp is active. Leapfrog is reversible and
//! volume preserving for any position-only force, so the Metropolis step keeps
//! the clamped target invariant.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TransitionDataset;
use crate::{Error, Result};

pub const LOG_DENSITY_FLOOR: f64 = -30.0;
pub const BOX_HALF_WIDTH: f64 = 6.0;
pub const DEFAULT_STEP: f64 = 0.5;
pub const DEFAULT_LEAPFROG: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    /// Equal mixture of unit-variance Gaussians at `(-2, 0)` and `(2, 0)`.
    #[serde(rename = "2gauss")]
    TwoGauss,
    /// Neal's funnel: `x1 ~ N(0, 3^2)`, `x2 | x1 ~ N(0, e^x1)`.
    #[serde(rename = "funnel")]
    Funnel,
    /// `x1 ~ N(0, 2^2)`, `x2 | x1 ~ N(0.3 (x1^2 - 4), 1)`.
    #[serde(rename = "banana")]
    Banana,
    /// Uniform on the box.
    #[serde(rename = "flat")]
    Flat,
}

impl PotentialKind {
    pub fn name(self) -> &'static str {
        match self {
            PotentialKind::TwoGauss => "2gauss",
            PotentialKind::Funnel => "funnel",
            PotentialKind::Banana => "banana",
            PotentialKind::Flat => "flat",
        }
    }
}

impl std::str::FromStr for PotentialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2gauss" => Ok(PotentialKind::TwoGauss),
            "funnel" => Ok(PotentialKind::Funnel),
            "banana" => Ok(PotentialKind::Banana),
            "flat" => Ok(PotentialKind::Flat),
            other => Err(Error::InvalidParameter(format!("unknown potential `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind) -> Self {
        PotentialSpec { kind }
    }

    pub fn in_box(&self, x: [f64; 2]) -> bool {
        x.iter().all(|v| v.abs() <= BOX_HALF_WIDTH)
    }

    /// Unclamped log-density and its gradient.
    fn raw(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let [a, b] = x;
        match self.kind {
            PotentialKind::TwoGauss => {
                let la = -0.5 * ((a - 2.0).powi(2) + b * b);
                let lb = -0.5 * ((a + 2.0).powi(2) + b * b);
                let m = la.max(lb);
                let (ea, eb) = ((la - m).exp(), (lb - m).exp());
                let lse = m + (ea + eb).ln();
                let (wa, wb) = (ea / (ea + eb), eb / (ea + eb));
                let ga = wa * (2.0 - a) + wb * (-2.0 - a);
                (lse, [ga, -b])
            }
            PotentialKind::Funnel => {
                let var = a.exp();
                let l = -a * a / 18.0 - b * b / (2.0 * var) - 0.5 * a;
                (l, [-a / 9.0 + b * b / (2.0 * var) - 0.5, -b / var])
            }
            PotentialKind::Banana => {
                let r = b - 0.3 * (a * a - 4.0);
                let l = -a * a / 8.0 - 0.5 * r * r;
                (l, [-a / 4.0 + r * 0.6 * a, -r])
            }
            PotentialKind::Flat => (0.0, [0.0, 0.0]),
        }
    }

    /// Clamped log-density; `-inf` outside the box.
    pub fn log_density(&self, x: [f64; 2]) -> f64 {
        if !self.in_box(x) {
            return f64::NEG_INFINITY;
        }
        self.raw(x).0.max(LOG_DENSITY_FLOOR)
    }

    /// Gradient of the clamped log-density.
    pub fn grad_log_density(&self, x: [f64; 2]) -> [f64; 2] {
        let (l, g) = self.raw(x);
        if l < LOG_DENSITY_FLOOR {
            [0.0, 0.0]
        } else {
            g
        }
    }
}

/// One HMC transition: fresh Gaussian momentum, `n_leapfrog` leapfrog steps
/// of size `step`, Metropolis accept/reject. Trajectories leaving the box are
/// rejected.
pub fn hmc_transition<R: Rng + ?Sized>(
    x: [f64; 2],
    pot: &PotentialSpec,
    step: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> [f64; 2] {
    let mut p = [rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)];
    let u: f64 = rng.random();
    let h0 = -pot.log_density(x) + 0.5 * (p[0] * p[0] + p[1] * p[1]);
    let mut q = x;
    let mut g = pot.grad_log_density(q);
    for _ in 0..n_leapfrog {
        for k in 0..2 {
            p[k] += 0.5 * step * g[k];
            q[k] += step * p[k];
        }
        if !pot.in_box(q) {
            return x;
        }
        g = pot.grad_log_density(q);
        for k in 0..2 {
            p[k] += 0.5 * step * g[k];
        }
    }
    let h1 = -pot.log_density(q) + 0.5 * (p[0] * p[0] + p[1] * p[1]);
    if u < (h0 - h1).exp() {
        q
    } else {
        x
    }
}

pub fn uniform_box_point<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    [
        rng.random_range(-BOX_HALF_WIDTH..=BOX_HALF_WIDTH),
        rng.random_range(-BOX_HALF_WIDTH..=BOX_HALF_WIDTH),
    ]
}

/// `n` pairs with `x` uniform on the box and one default HMC step.
pub fn potentials_make_dataset<R: Rng + ?Sized>(pot: &PotentialSpec, n: usize, rng: &mut R) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut xs = Vec::with_capacity(2 * n);
    let mut xps = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x = uniform_box_point(rng);
        let y = hmc_transition(x, pot, DEFAULT_STEP, DEFAULT_LEAPFROG, rng);
        xs.extend_from_slice(&x);
        xps.extend_from_slice(&y);
    }
    TransitionDataset::from_flat(2, xs, xps, None)
}

/// Reference sample: `particles` independent chains started uniformly on the
/// box, each run for `steps` default HMC transitions. Row-major `2 x n`.
pub fn hmc_reference_sample<R: Rng + ?Sized>(pot: &PotentialSpec, particles: usize, steps: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * particles);
    for _ in 0..particles {
        let mut x = uniform_box_point(rng);
        for _ in 0..steps {
            x = hmc_transition(x, pot, DEFAULT_STEP, DEFAULT_LEAPFROG, rng);
        }
        out.extend_from_slice(&x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    const KINDS: [PotentialKind; 3] = [PotentialKind::TwoGauss, PotentialKind::Funnel, PotentialKind::Banana];

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(0);
        for kind in KINDS {
            let pot = PotentialSpec::new(kind);
            for _ in 0..50 {
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let (l, g) = pot.raw(x);
                if l < LOG_DENSITY_FLOOR + 1.0 {
                    continue;
                }
                for k in 0..2 {
                    let h = 1e-6;
                    let mut a = x;
                    let mut b = x;
                    a[k] += h;
                    b[k] -= h;
                    let fd = (pot.raw(a).0 - pot.raw(b).0) / (2.0 * h);
                    assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{kind:?} {x:?}");
                }
            }
        }
    }

    #[test]
    fn log_density_is_finite_and_floored_on_the_box() {
        let mut rng = seeded_rng(1);
        for kind in KINDS {
            let pot = PotentialSpec::new(kind);
            for _ in 0..1000 {
                let l = pot.log_density(uniform_box_point(&mut rng));
                assert!(l.is_finite() && l >= LOG_DENSITY_FLOOR);
            }
            assert_eq!(pot.log_density([7.0, 0.0]), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn flat_potential_always_accepts() {
        let mut rng = seeded_rng(2);
        let pot = PotentialSpec::new(PotentialKind::Flat);
        for _ in 0..1000 {
            let x = [0.0, 0.0];
            let y = hmc_transition(x, &pot, 0.01, 1, &mut rng);
            assert_ne!(x, y);
        }
    }

    #[test]
    fn zero_step_stays_put() {
        let mut rng = seeded_rng(3);
        let pot = PotentialSpec::new(PotentialKind::Banana);
        let x = [1.0, -0.5];
        for _ in 0..100 {
            assert_eq!(hmc_transition(x, &pot, 0.0, 1, &mut rng), x);
        }
    }

    #[test]
    fn two_gauss_chain_mean_is_the_midpoint() {
        let mut rng = seeded_rng(4);
        let pot = PotentialSpec::new(PotentialKind::TwoGauss);
        let sample = hmc_reference_sample(&pot, 4000, 200, &mut rng);
        let n = sample.len() / 2;
        let m0 = sample.iter().step_by(2).sum::<f64>() / n as f64;
        let m1 = sample.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        assert!(m0.abs() < 0.15 && m1.abs() < 0.1, "({m0}, {m1})");
    }

    #[test]
    fn parse_ids() {
        assert_eq!("2gauss".parse::<PotentialKind>().unwrap(), PotentialKind::TwoGauss);
        assert!("kidney".parse::<PotentialKind>().is_err());
    }
}
