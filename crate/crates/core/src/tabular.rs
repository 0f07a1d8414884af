//! Exact dense-vector solvers for finite state spaces.
//!
//! Conventions: kernels are row-stochastic, `K[i][j] = T(j | i)`, and
//! distributions are pushed forward with `K^T`. The joint matrix
//! `Tp[i][j] = T(j | i) p(i)` is the law of a dataset pair `(x, x')`.
//!
//! Everything here is a pure function of its inputs and serves as the oracle
//! for the stochastic estimator in [`crate::vpm`].

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::TransitionDataset;
use crate::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const JOINT_SUM_TOL: f64 = 1e-10;

/// Dense row-stochastic transition kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularChain {
    states: usize,
    kernel: Vec<f64>,
}

impl TabularChain {
    /// `kernel` is row-major `S x S`.
    pub fn new(states: usize, kernel: Vec<f64>) -> Result<Self> {
        if states == 0 {
            return Err(Error::Empty);
        }
        if kernel.len() != states * states {
            return Err(Error::LengthMismatch {
                what: "kernel entries",
                expected: states * states,
                found: kernel.len(),
            });
        }
        for (i, row) in kernel.chunks_exact(states).enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {i} sums to {sum}"
                )));
            }
        }
        Ok(TabularChain { states, kernel })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.len();
        let mut kernel = Vec::with_capacity(s * s);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != s {
                return Err(Error::DimensionMismatch {
                    row: i,
                    expected: s,
                    found: r.len(),
                });
            }
            kernel.extend_from_slice(r);
        }
        Self::new(s, kernel)
    }

    /// A chain with strictly positive entries (hence ergodic), rows drawn
    /// from normalized exponential weights.
    pub fn random_ergodic<R: Rng + ?Sized>(states: usize, rng: &mut R) -> Self {
        let mut kernel = vec![0.0; states * states];
        for row in kernel.chunks_exact_mut(states) {
            for v in row.iter_mut() {
                let u: f64 = rng.random();
                // Exponential(1) weights give a uniform draw on the simplex.
                *v = -(1.0 - u).ln() + 1e-3;
            }
            normalize_in_place(row);
        }
        TabularChain { states, kernel }
    }

    pub fn identity(states: usize) -> Self {
        let mut kernel = vec![0.0; states * states];
        for i in 0..states {
            kernel[i * states + i] = 1.0;
        }
        TabularChain { states, kernel }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.kernel[from * self.states + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.kernel[from * self.states..(from + 1) * self.states]
    }

    /// `K^T mu`.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let s = self.states;
        let mut out = vec![0.0; s];
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, &k) in out.iter_mut().zip(self.row(i)) {
                *o += m * k;
            }
        }
        out
    }

    /// The joint law of `(x, x')` when `x ~ p`.
    pub fn joint(&self, p: &ProbeVector) -> JointMatrix {
        let s = self.states;
        let mut data = vec![0.0; s * s];
        for i in 0..s {
            for j in 0..s {
                data[i * s + j] = self.prob(i, j) * p.0[i];
            }
        }
        JointMatrix { states: s, data }
    }
}

/// Probe distribution over a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeVector(Vec<f64>);

impl ProbeVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_probability(&p, ROW_SUM_TOL, "probe")?;
        Ok(ProbeVector(p))
    }

    pub fn uniform(states: usize) -> Self {
        ProbeVector(vec![1.0 / states as f64; states])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Every state carrying stationary mass must carry probe mass.
    pub fn check_support(&self, mu: &[f64]) -> Result<()> {
        for (state, (&p, &m)) in self.0.iter().zip(mu).enumerate() {
            if m > 0.0 && p <= 0.0 {
                return Err(Error::ZeroProbe { state, mass: m });
            }
        }
        Ok(())
    }
}

/// `Tp[i][j] = T(j | i) p(i)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMatrix {
    states: usize,
    data: Vec<f64>,
}

impl JointMatrix {
    pub fn new(states: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != states * states {
            return Err(Error::LengthMismatch {
                what: "joint entries",
                expected: states * states,
                found: data.len(),
            });
        }
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "joint matrix has a negative or non-finite entry".into(),
            ));
        }
        let total: f64 = data.iter().sum();
        if (total - 1.0).abs() > JOINT_SUM_TOL {
            return Err(Error::InvalidParameter(format!(
                "joint matrix sums to {total}"
            )));
        }
        Ok(JointMatrix { states, data })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.states + to]
    }

    /// Marginal of x: `sum_j Tp[i][j]`.
    pub fn row_marginal(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.states)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// `(Tp^T tau)(j) = sum_i Tp[i][j] tau(i)`.
    pub fn apply_transposed(&self, tau: &[f64]) -> Vec<f64> {
        let s = self.states;
        let mut out = vec![0.0; s];
        for (i, &t) in tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(&self.data[i * s..(i + 1) * s]) {
                *o += v * t;
            }
        }
        out
    }
}

/// Nonnegative density ratio `tau = mu / p` on a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVector(Vec<f64>);

impl RatioVector {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if let Some(i) = tau.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ratio entry {i} is negative or non-finite"
            )));
        }
        Ok(RatioVector(tau))
    }

    pub fn ones(states: usize) -> Self {
        RatioVector(vec![1.0; states])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `sum_i p(i) tau(i)`, i.e. `E_p[tau]`.
    pub fn normalization(&self, p: &ProbeVector) -> f64 {
        self.0.iter().zip(&p.0).map(|(t, q)| t * q).sum()
    }

    /// `p o tau`, the distribution the ratio represents.
    pub fn distribution(&self, p: &ProbeVector) -> Vec<f64> {
        self.0.iter().zip(&p.0).map(|(t, q)| t * q).collect()
    }
}

/// One power-method step `mu <- K^T mu`.
pub fn power_step(chain: &TabularChain, mu: &[f64]) -> Vec<f64> {
    chain.push_forward(mu)
}

/// Plain power iteration from the uniform distribution until
/// `||mu - K^T mu||_1 <= tol`.
///
/// Returns the distribution and the number of power steps applied. A chain
/// that never meets the tolerance (periodic or reducible in practice) yields
/// [`Error::NoConvergence`].
pub fn solve_stationary(chain: &TabularChain, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let s = chain.states();
    solve_stationary_from(chain, vec![1.0 / s as f64; s], tol, max_iter)
}

/// As [`solve_stationary`] but from a caller-supplied start.
pub fn solve_stationary_from(
    chain: &TabularChain,
    mut mu: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut residual = f64::INFINITY;
    for iter in 0..=max_iter {
        let next = power_step(chain, &mu);
        residual = l1_distance(&mu, &next);
        if residual <= tol {
            return Ok((mu, iter));
        }
        mu = next;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// One ratio power step `tau(j) <- (Tp^T tau)(j) / p(j)`.
///
/// States with zero probe mass get ratio 0 when nothing flows into them, and
/// an [`Error::ZeroProbe`] when mass does.
pub fn ratio_power_step(joint: &JointMatrix, p: &ProbeVector, tau: &RatioVector) -> Result<RatioVector> {
    let flow = joint.apply_transposed(&tau.0);
    let mut out = Vec::with_capacity(flow.len());
    for (state, (&f, &q)) in flow.iter().zip(&p.0).enumerate() {
        if q > 0.0 {
            out.push(f / q);
        } else if f > 0.0 {
            return Err(Error::ZeroProbe { state, mass: f });
        } else {
            out.push(0.0);
        }
    }
    Ok(RatioVector(out))
}

/// Exact minimizer of the penalized quadratic
/// `1/2 E_p[tau^2] - E_Tp[tau_t(x) tau(x')] + lambda (E_p[tau] - 1)^2`.
///
/// Stationarity gives the diagonal-plus-rank-one system
/// `(diag(p) + 2 lambda p p^T) tau = Tp^T tau_t + 2 lambda p`, solved here
/// with the Sherman-Morrison identity. When `E_p[tau_t] = 1` the solution
/// coincides with [`ratio_power_step`] for every `lambda > 0`.
pub fn regularized_update_closed_form(
    joint: &JointMatrix,
    p: &ProbeVector,
    tau_t: &RatioVector,
    lambda: f64,
) -> Result<RatioVector> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let norm = tau_t.normalization(p);
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidParameter(format!(
            "reference ratio must satisfy E_p[tau] = 1, got {norm}"
        )));
    }
    let flow = joint.apply_transposed(&tau_t.0);
    // System A tau = b with A = D + u v^T, D = diag(p), u = 2 lambda p, v = p.
    let b: Vec<f64> = flow.iter().zip(&p.0).map(|(f, q)| f + 2.0 * lambda * q).collect();
    let mut d_inv_b = vec![0.0; b.len()];
    let mut d_inv_u = vec![0.0; b.len()];
    for (state, (&q, &bj)) in p.0.iter().zip(&b).enumerate() {
        if q > 0.0 {
            d_inv_b[state] = bj / q;
            d_inv_u[state] = 2.0 * lambda;
        } else if flow[state] > 0.0 {
            // A zero row of A with a nonzero right-hand side.
            return Err(Error::Singular);
        }
    }
    let v_d_inv_u: f64 = p.0.iter().zip(&d_inv_u).map(|(q, x)| q * x).sum();
    let v_d_inv_b: f64 = p.0.iter().zip(&d_inv_b).map(|(q, x)| q * x).sum();
    let denom = 1.0 + v_d_inv_u;
    if denom.abs() < f64::EPSILON {
        return Err(Error::Singular);
    }
    let scale = v_d_inv_b / denom;
    let tau = d_inv_b
        .iter()
        .zip(&d_inv_u)
        .map(|(x, y)| (x - y * scale).max(0.0))
        .collect();
    Ok(RatioVector(tau))
}

/// Record of a noisy damped power iteration.
#[derive(Debug, Clone)]
pub struct NoisyTrajectory {
    /// `||mu_k - K^T mu_k||_2^2` for `k = 1..=t`.
    pub residuals: Vec<f64>,
    /// Unnormalized iterate weights `alpha_k (1 - alpha_k)`.
    pub weights: Vec<f64>,
    /// Weighted mean residual over all `t` iterates.
    pub weighted_residual: f64,
    /// Final iterate.
    pub last: Vec<f64>,
}

impl NoisyTrajectory {
    /// Weighted mean residual over the first `horizon` iterates, i.e. the
    /// expected residual of a randomly selected iterate `R` with
    /// `Pr(R = k) ∝ alpha_k (1 - alpha_k)`.
    pub fn weighted_residual_at(&self, horizon: usize) -> f64 {
        let h = horizon.min(self.residuals.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, w) in self.residuals[..h].iter().zip(&self.weights[..h]) {
            num += r * w;
            den += w;
        }
        if den > 0.0 {
            num / den
        } else {
            f64::NAN
        }
    }
}

/// Damped power iteration with additive noise and step size `1/sqrt(k)`:
/// `mu_k = (1 - a_k) mu_{k-1} + a_k (K^T mu_{k-1} + eps_k)`.
///
/// `eps_k` is i.i.d. Gaussian per coordinate with standard deviation
/// `noise_scale`, projected onto the zero-sum hyperplane. Negative entries
/// of the iterate are clipped and the iterate renormalized.
pub fn damped_noisy_iteration<R: Rng + ?Sized>(
    chain: &TabularChain,
    mu0: &[f64],
    noise_scale: f64,
    steps: usize,
    rng: &mut R,
) -> Result<NoisyTrajectory> {
    let s = chain.states();
    if mu0.len() != s {
        return Err(Error::LengthMismatch {
            what: "initial distribution",
            expected: s,
            found: mu0.len(),
        });
    }
    check_probability(mu0, 1e-10, "initial distribution")?;
    let mut mu = mu0.to_vec();
    let mut residuals = Vec::with_capacity(steps);
    let mut weights = Vec::with_capacity(steps);
    let mut noise = vec![0.0; s];
    let mut pushed = chain.push_forward(&mu);
    for k in 1..=steps {
        let alpha = 1.0 / (k as f64).sqrt();
        if noise_scale > 0.0 {
            for e in noise.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *e = noise_scale * z;
            }
            let mean = noise.iter().sum::<f64>() / s as f64;
            noise.iter_mut().for_each(|e| *e -= mean);
        }
        for ((m, &t), &e) in mu.iter_mut().zip(&pushed).zip(&noise) {
            *m = ((1.0 - alpha) * *m + alpha * (t + e)).max(0.0);
        }
        normalize_in_place(&mut mu);
        pushed = chain.push_forward(&mu);
        residuals.push(
            mu.iter()
                .zip(&pushed)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        );
        weights.push(alpha * (1.0 - alpha));
    }
    let mut traj = NoisyTrajectory {
        residuals,
        weights,
        weighted_residual: 0.0,
        last: mu,
    };
    traj.weighted_residual = traj.weighted_residual_at(steps);
    Ok(traj)
}

/// Fixed point of `p o tau = (1 - gamma) mu0pi + gamma Tp^T tau`.
///
/// Iterates from `tau = 1` until the equation residual (l1) is at most
/// `1e-12`. The map is a `gamma`-contraction in the weighted l1 norm, so the
/// iteration count grows like `1 / (1 - gamma)`.
pub fn discounted_ratio_fixed_point(
    joint: &JointMatrix,
    p: &ProbeVector,
    mu0pi: &[f64],
    gamma: f64,
) -> Result<RatioVector> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let s = joint.states();
    if mu0pi.len() != s || p.len() != s {
        return Err(Error::LengthMismatch {
            what: "initial distribution",
            expected: s,
            found: mu0pi.len(),
        });
    }
    check_probability(mu0pi, 1e-10, "initial distribution")?;
    const TOL: f64 = 1e-12;
    let max_iter = ((TOL.ln() / gamma.max(1e-300).ln()).ceil() as usize)
        .saturating_mul(4)
        .clamp(64, 50_000_000);
    let step = |tau: &[f64]| -> Result<Vec<f64>> {
        let flow = joint.apply_transposed(tau);
        let mut out = Vec::with_capacity(s);
        for (state, ((&m, &f), &q)) in mu0pi.iter().zip(&flow).zip(&p.0).enumerate() {
            let mass = (1.0 - gamma) * m + gamma * f;
            if q > 0.0 {
                out.push(mass / q);
            } else if mass > 0.0 {
                return Err(Error::ZeroProbe { state, mass });
            } else {
                out.push(0.0);
            }
        }
        Ok(out)
    };
    let mut tau = vec![1.0; s];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = step(&tau)?;
        residual = next
            .iter()
            .zip(&tau)
            .zip(&p.0)
            .map(|((a, b), q)| q * (a - b).abs())
            .sum();
        tau = next;
        if residual <= TOL {
            return Ok(RatioVector(tau));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Empirical joint and probe from a dataset of integer states in `[0, S)`.
pub fn empirical_joint_from_data(ds: &TransitionDataset, states: usize) -> Result<(JointMatrix, ProbeVector)> {
    if ds.dim() != 1 {
        return Err(Error::DimensionMismatch {
            row: 0,
            expected: 1,
            found: ds.dim(),
        });
    }
    let n = ds.len();
    let mut counts = vec![0u64; states * states];
    let mut px = vec![0u64; states];
    for row in 0..n {
        let i = cast_state(ds.x(row)[0], states, row)?;
        let j = cast_state(ds.xp(row)[0], states, row)?;
        counts[i * states + j] += 1;
        px[i] += 1;
    }
    let inv = 1.0 / n as f64;
    let joint = JointMatrix {
        states,
        data: counts.iter().map(|&c| c as f64 * inv).collect(),
    };
    let probe = ProbeVector(px.iter().map(|&c| c as f64 * inv).collect());
    Ok((joint, probe))
}

/// Casts a coordinate to a state index, requiring an exact integer in range.
pub fn cast_state(value: f64, states: usize, row: usize) -> Result<usize> {
    if value.fract() != 0.0 || value < 0.0 || value >= states as f64 {
        return Err(Error::InvalidState {
            row,
            value,
            states,
        });
    }
    Ok(value as usize)
}

fn check_probability(p: &[f64], tol: f64, what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty);
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn normalize_in_place(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
