//! Oracle suite run by `vpm selftest`: each check compares a library routine
//! with an independent computation (dense linear solves, finite differences,
//! algebraic identities).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use vpm::data::TransitionDataset;
use vpm::metrics::{kl_divergence, mmd_gaussian, FiniteDistribution, DEFAULT_KL_FLOOR};
use vpm::models::{Activation, Architecture, RatioModel};
use vpm::tabular::{
    discounted_ratio_fixed_point, empirical_joint_from_data, ratio_power_step, regularized_update_closed_form,
    ProbeVector, RatioVector, TabularChain,
};
use vpm::vpm::{loss_and_grads, Damping, ExactSolver, SaddleState, VpmConfig};
use vpm::{seeded_rng, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, worst: f64, tol: f64) -> Self {
        Check {
            name,
            passed: worst <= tol,
            detail: format!("worst {worst:.3e}, tolerance {tol:.0e}"),
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

/// Stationary law from the dense system `(K^T - I) mu = 0`, `sum mu = 1`.
pub fn dense_stationary(chain: &TabularChain) -> Vec<f64> {
    let s = chain.states();
    let mut a = DMatrix::from_fn(s, s, |i, j| chain.prob(j, i) - if i == j { 1.0 } else { 0.0 });
    a.row_mut(s - 1).fill(1.0);
    let mut b = DVector::zeros(s);
    b[s - 1] = 1.0;
    a.lu().solve(&b).expect("ergodic chains give a regular system").iter().copied().collect()
}

/// Discounted ratio from `(diag(p) - gamma P^T diag(p)) tau = (1 - gamma) mu0`.
pub fn dense_discounted_ratio(chain: &TabularChain, p: &[f64], mu0: &[f64], gamma: f64) -> Vec<f64> {
    let s = chain.states();
    let a = DMatrix::from_fn(s, s, |i, j| {
        (if i == j { p[i] } else { 0.0 }) - gamma * chain.prob(j, i) * p[j]
    });
    let b = DVector::from_iterator(s, mu0.iter().map(|m| (1.0 - gamma) * m));
    a.lu().solve(&b).expect("gamma < 1 gives a regular system").iter().copied().collect()
}

pub fn random_probe<R: Rng + ?Sized>(states: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..states).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn stationary_fixed_point(rng: &mut SeededRng) -> vpm::Result<(Check, Check)> {
    let mut worst = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..20 {
        let s = rng.random_range(2..=20);
        let chain = TabularChain::random_ergodic(s, rng);
        let p = random_probe(s, rng);
        let probe = ProbeVector::new(p.clone())?;
        let mu = dense_stationary(&chain);
        let star = RatioVector::new(mu.iter().zip(&p).map(|(m, q)| m / q).collect())?;
        let joint = chain.joint(&probe);
        let power = ratio_power_step(&joint, &probe, &star)?;
        worst = worst.max(max_abs_diff(power.as_slice(), star.as_slice()));
        for lambda in [0.01, 1.0, 100.0] {
            let next = regularized_update_closed_form(&joint, &probe, &star, lambda)?;
            worst = worst.max(max_abs_diff(next.as_slice(), star.as_slice()));
            worst_norm = worst_norm.max((next.normalization(&probe) - 1.0).abs());
        }
    }
    Ok((
        Check::new("stationary ratio is the regularized fixed point", worst, 1e-9),
        Check::new("fixed point is normalized", worst_norm, 1e-10),
    ))
}

fn discounted_fixed_point(rng: &mut SeededRng) -> vpm::Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let s = rng.random_range(2..=12);
        let chain = TabularChain::random_ergodic(s, rng);
        let p = random_probe(s, rng);
        let mu0 = random_probe(s, rng);
        let gamma = rng.random_range(0.0..0.95);
        let probe = ProbeVector::new(p.clone())?;
        let tau = discounted_ratio_fixed_point(&chain.joint(&probe), &probe, &mu0, gamma)?;
        let oracle = dense_discounted_ratio(&chain, &p, &mu0, gamma);
        worst = worst.max(max_abs_diff(tau.as_slice(), &oracle));
    }
    Ok(Check::new("discounted ratio solves its linear system", worst, 1e-9))
}

fn chain_dataset(chain: &TabularChain, n: usize, rng: &mut SeededRng) -> vpm::Result<TransitionDataset> {
    let s = chain.states();
    let mut xs = Vec::with_capacity(n);
    let mut xps = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let j = chain
            .row(i)
            .iter()
            .position(|&q| {
                acc += q;
                u < acc
            })
            .unwrap_or(s - 1);
        xs.push(i as f64);
        xps.push(j as f64);
    }
    TransitionDataset::from_flat(1, xs, xps, None)
}

fn exact_step(rng: &mut SeededRng) -> vpm::Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let s = rng.random_range(2..=10);
        let chain = TabularChain::random_ergodic(s, rng);
        let ds = chain_dataset(&chain, 400 * s, rng)?;
        let (joint, probe) = empirical_joint_from_data(&ds, s)?;
        let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.2..2.0)).collect();
        let norm: f64 = raw.iter().zip(probe.as_slice()).map(|(t, q)| t * q).sum();
        let tau_t: Vec<f64> = raw.iter().map(|t| t / norm).collect();
        let model = RatioModel::tabular_from_values(vec![s], &tau_t)?;
        let alpha = rng.random_range(0.05..1.0);
        let lambda = rng.random_range(0.1..10.0);
        let step = ExactSolver::new(&model, &ds, None)?.solve(&tau_t, alpha, 1.0, lambda)?;
        let power = ratio_power_step(&joint, &probe, &RatioVector::new(tau_t.clone())?)?;
        let expected: Vec<f64> = tau_t
            .iter()
            .zip(power.as_slice())
            .map(|(t, q)| (1.0 - alpha) * t + alpha * q)
            .collect();
        worst = worst.max(max_abs_diff(&step.tau, &expected));
    }
    Ok(Check::new("exact inner step is the damped power step", worst, 1e-9))
}

fn gradients(rng: &mut SeededRng) -> vpm::Result<Check> {
    let tab_ds = chain_dataset(&TabularChain::random_ergodic(5, rng), 40, rng)?;
    let cont: Vec<f64> = (0..80).map(|_| rng.random_range(-2.0..2.0)).collect();
    let cont_ds = TransitionDataset::from_flat(2, cont[..40].to_vec(), cont[40..].to_vec(), None)?;
    let kinds = [
        (Architecture::tabular(5), &tab_ds, vec![0.0, 4.0]),
        (Architecture::fourier(2, 8, 1.0, rng), &cont_ds, vec![0.3, -0.2, 1.0, 0.5]),
        (Architecture::mlp(2, &[6, 4], Activation::Tanh), &cont_ds, vec![0.3, -0.2, 1.0, 0.5]),
    ];
    let mut worst = 0.0f64;
    for (arch, ds, init) in &kinds {
        for gamma in [None, Some(0.8)] {
            let model = RatioModel::new(arch.clone(), rng)?;
            let mut st = SaddleState::new(model);
            let shift: Vec<f64> = (0..st.model.param_count()).map(|_| rng.random_range(-0.3..0.3)).collect();
            st.model.apply_update(&shift)?;
            st.v = rng.random_range(-0.5..0.5);
            st.outer_step = rng.random_range(0..5);
            let cfg = VpmConfig {
                gamma,
                damping: Damping::InvSqrt,
                lambda: rng.random_range(0.1..2.0),
                ..VpmConfig::default()
            };
            let mb = ds.sample_minibatch(9, rng);
            let init = gamma.map(|_| init.as_slice());
            let lg = loss_and_grads(&st, &mb, init, &cfg)?;
            let h = 1e-5;
            let objective = |st: &SaddleState| loss_and_grads(st, &mb, init, &cfg).map(|l| l.objective);
            let mut fd_and_exact = Vec::new();
            for k in 0..st.model.param_count() {
                let mut e = vec![0.0; st.model.param_count()];
                let (mut plus, mut minus) = (st.clone(), st.clone());
                e[k] = h;
                plus.model.apply_update(&e)?;
                e[k] = -h;
                minus.model.apply_update(&e)?;
                fd_and_exact.push(((objective(&plus)? - objective(&minus)?) / (2.0 * h), lg.g_theta.g[k]));
            }
            let (mut plus, mut minus) = (st.clone(), st.clone());
            plus.v += h;
            minus.v -= h;
            fd_and_exact.push(((objective(&plus)? - objective(&minus)?) / (2.0 * h), lg.g_v));
            for (fd, g) in fd_and_exact {
                worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
            }
        }
    }
    Ok(Check::new("objective gradients match central differences", worst, 1e-5))
}

fn metric_identities(rng: &mut SeededRng) -> vpm::Result<Check> {
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let s = rng.random_range(1..=10);
        let q = FiniteDistribution::new(random_probe(s, rng))?;
        worst = worst.max(kl_divergence(&q, &q, DEFAULT_KL_FLOOR)?.abs());
        let dim = rng.random_range(1..=3);
        let n = rng.random_range(2..=30);
        let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        worst = worst.max(mmd_gaussian(&x, &x, dim, None)?.abs());
    }
    Ok(Check::new("kl(q, q) and mmd(X, X) vanish", worst, 1e-12))
}

/// Runs every check; library errors count as failures.
pub fn run(seed: u64) -> Vec<Check> {
    let mut rng = seeded_rng(seed);
    let mut checks = Vec::new();
    let failed = |name: &'static str, e: vpm::Error| Check {
        name,
        passed: false,
        detail: e.to_string(),
    };
    match stationary_fixed_point(&mut rng) {
        Ok((a, b)) => checks.extend([a, b]),
        Err(e) => checks.push(failed("stationary ratio is the regularized fixed point", e)),
    }
    checks.push(discounted_fixed_point(&mut rng).unwrap_or_else(|e| failed("discounted fixed point", e)));
    checks.push(exact_step(&mut rng).unwrap_or_else(|e| failed("exact inner step", e)));
    checks.push(gradients(&mut rng).unwrap_or_else(|e| failed("objective gradients", e)));
    checks.push(metric_identities(&mut rng).unwrap_or_else(|e| failed("metric identities", e)));
    checks
}
