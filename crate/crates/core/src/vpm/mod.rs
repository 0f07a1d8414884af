//! The variational power method.
//!
//! Each outer step freezes the current model as the reference `tau_t` and
//! then (approximately) solves the damped saddle problem
//!
//! ```text
//! min_tau max_v  1/2 E_p[tau^2] - (1 - a) E_p[tau_t tau] - a g E_Tp[tau_t(x) tau(x')]
//!                - a (1 - g) E_init[tau] + lambda (2 v (E_p[tau] - 1) - v^2)
//! ```
//!
//! where `a` is the damping weight of the step and `g` the discount (`g = 1`
//! and no initial term in the undiscounted case). All `E_p` terms average over
//! the x-column of the data; the cross term pairs the frozen reference at `x`
//! with the trained model at `x'`.

mod exact;
mod optim;

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Minibatch, TransitionDataset};
use crate::models::{GradAccumulator, ModelKind, RatioModel};
use crate::{seeded_rng, Error, Result};

pub use exact::{ExactSolver, ExactStep};
pub use optim::{adam_step, AdamMoments, Optimizer};

/// Damping weight `a_{t+1}` of outer step `t` (counted from 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Damping {
    /// `1 / sqrt(t + 1)`.
    InvSqrt,
    Constant { alpha: f64 },
    /// Plain power iteration, `a = 1`.
    #[serde(rename = "none")]
    Undamped,
}

impl Damping {
    pub fn alpha(&self, outer_step: usize) -> f64 {
        match *self {
            Damping::InvSqrt => 1.0 / ((outer_step + 1) as f64).sqrt(),
            Damping::Constant { alpha } => alpha,
            Damping::Undamped => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchSize {
    Full,
    Sampled(usize),
}

/// How each inner problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnerSolver {
    /// `inner_steps` stochastic descent-ascent steps.
    Gradient,
    /// Closed-form minimization over the full dataset; tabular models only.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpmConfig {
    pub outer_steps: usize,
    pub inner_steps: usize,
    pub batch: BatchSize,
    pub lambda: f64,
    pub lr_theta: f64,
    pub lr_v: f64,
    pub damping: Damping,
    pub optimizer: Optimizer,
    /// Discount for the occupancy objective; `None` targets the stationary
    /// distribution.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub inner_solver: InnerSolver,
    /// Keep `v` across outer steps instead of restarting it at 0.
    pub warm_start_v: bool,
}

impl Default for VpmConfig {
    fn default() -> Self {
        VpmConfig {
            outer_steps: 50,
            inner_steps: 50,
            batch: BatchSize::Sampled(512),
            lambda: 1.0,
            lr_theta: 1e-3,
            lr_v: 1e-3,
            damping: Damping::InvSqrt,
            optimizer: Optimizer::adam_default(),
            gamma: None,
            seed: 0,
            inner_solver: InnerSolver::Gradient,
            warm_start_v: false,
        }
    }
}

impl VpmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.outer_steps == 0 || self.inner_steps == 0 {
            return bad("outer_steps and inner_steps must be at least 1".into());
        }
        if self.batch == BatchSize::Sampled(0) {
            return bad("batch size must be at least 1".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.lr_theta > 0.0) || !(self.lr_v > 0.0) || !self.lr_theta.is_finite() || !self.lr_v.is_finite() {
            return bad("learning rates must be positive".into());
        }
        if let Damping::Constant { alpha } = self.damping {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return bad(format!("constant damping must lie in (0, 1], got {alpha}"));
            }
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return bad(format!("gamma must lie in [0, 1), got {g}"));
            }
        }
        Ok(())
    }

    fn discount(&self) -> f64 {
        self.gamma.unwrap_or(1.0)
    }
}

/// Sample pool for the initial-distribution term of the discounted
/// objective: points `x' = (s0, a0)` with `s0 ~ mu0`, `a0 ~ pi(.|s0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialTermSpec {
    dim: usize,
    points: Vec<f64>,
}

impl InitialTermSpec {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::Empty);
        }
        if points.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                row: points.len() / dim,
                expected: dim,
                found: points.len() % dim,
            });
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i / dim });
        }
        Ok(InitialTermSpec { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn sample<R: Rng + ?Sized>(&self, batch: BatchSize, rng: &mut R) -> Vec<f64> {
        match batch {
            BatchSize::Full => self.points.clone(),
            BatchSize::Sampled(size) => {
                let n = self.len();
                let mut out = Vec::with_capacity(size * self.dim);
                for _ in 0..size {
                    let i = rng.random_range(0..n);
                    out.extend_from_slice(&self.points[i * self.dim..(i + 1) * self.dim]);
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaddleState {
    pub model: RatioModel,
    /// Frozen `tau_t` for the current outer step.
    pub reference: RatioModel,
    pub v: f64,
    pub theta_moments: AdamMoments,
    pub v_moments: AdamMoments,
    pub outer_step: usize,
}

impl SaddleState {
    pub fn new(model: RatioModel) -> Self {
        let n = model.param_count();
        SaddleState {
            reference: model.snapshot(),
            model,
            v: 0.0,
            theta_moments: AdamMoments::zeros(n),
            v_moments: AdamMoments::zeros(1),
            outer_step: 0,
        }
    }

    /// Damping weight in effect for the current outer step.
    pub fn alpha(&self, cfg: &VpmConfig) -> f64 {
        cfg.damping.alpha(self.outer_step)
    }
}

/// Minibatch objective value and gradients.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub objective: f64,
    pub g_theta: GradAccumulator,
    pub g_v: f64,
    /// Minibatch estimate of `E_p[tau]` over the x-column.
    pub mean_tau: f64,
}

/// Minibatch estimate of the saddle objective and its gradients
/// `(dJ/dtheta, dJ/dv)`.
///
/// `init` holds initial-term points and is required in discounted mode.
pub fn loss_and_grads(st: &SaddleState, mb: &Minibatch, init: Option<&[f64]>, cfg: &VpmConfig) -> Result<LossGrads> {
    if mb.is_empty() {
        return Err(Error::Empty);
    }
    let step = st.outer_step;
    let alpha = st.alpha(cfg);
    let gamma = cfg.discount();
    let lambda = cfg.lambda;
    let v = st.v;
    let init = match (cfg.gamma, init) {
        (Some(_), Some(pts)) if !pts.is_empty() => pts,
        (Some(_), _) => {
            return Err(Error::InvalidParameter("discounted objective needs initial-term points".into()));
        }
        (None, _) => &[],
    };
    let b = mb.len();
    let mut points = Vec::with_capacity(mb.xs().len() * 2 + init.len());
    points.extend_from_slice(mb.xs());
    points.extend_from_slice(mb.xps());
    points.extend_from_slice(init);
    let fwd = st.model.forward(&points)?;
    let values = fwd.values();
    let (tau_x, rest) = values.split_at(b);
    let (tau_xp, tau_init) = rest.split_at(b);
    let reference = st.reference.value_batch(mb.xs())?;

    let inv_b = 1.0 / b as f64;
    let mean_tau = tau_x.iter().sum::<f64>() * inv_b;
    let quad = tau_x
        .iter()
        .zip(&reference)
        .map(|(&t, &r)| 0.5 * t * t - (1.0 - alpha) * r * t)
        .sum::<f64>()
        * inv_b;
    let cross = tau_xp.iter().zip(&reference).map(|(&t, &r)| r * t).sum::<f64>() * inv_b;
    let init_mean = if tau_init.is_empty() {
        0.0
    } else {
        tau_init.iter().sum::<f64>() / tau_init.len() as f64
    };
    let penalty = lambda * (2.0 * v * (mean_tau - 1.0) - v * v);
    let objective = quad - alpha * gamma * cross - alpha * (1.0 - gamma) * init_mean + penalty;
    for (term, value) in [
        ("quadratic term", quad),
        ("cross term", cross),
        ("initial term", init_mean),
        ("normalization term", penalty),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFiniteTerm { term, step });
        }
    }

    let mut weights = Vec::with_capacity(values.len());
    weights.extend(
        tau_x
            .iter()
            .zip(&reference)
            .map(|(&t, &r)| (t - (1.0 - alpha) * r + 2.0 * lambda * v) * inv_b),
    );
    weights.extend(reference.iter().map(|&r| -alpha * gamma * r * inv_b));
    if !tau_init.is_empty() {
        let w = -alpha * (1.0 - gamma) / tau_init.len() as f64;
        weights.extend(std::iter::repeat_n(w, tau_init.len()));
    }
    let mut g_theta = st.model.backward(&fwd, &weights)?;
    g_theta.samples = b;
    if g_theta.g.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteTerm {
            term: "parameter gradient",
            step,
        });
    }
    let g_v = 2.0 * lambda * (mean_tau - 1.0 - v);
    Ok(LossGrads {
        objective,
        g_theta,
        g_v,
        mean_tau,
    })
}

/// Draws the minibatch (and initial-term points) for one inner step.
fn draw_batch<R: Rng + ?Sized>(
    ds: &TransitionDataset,
    init: Option<&InitialTermSpec>,
    cfg: &VpmConfig,
    rng: &mut R,
) -> (Minibatch, Option<Vec<f64>>) {
    let mb = match cfg.batch {
        BatchSize::Full => ds.full_batch(),
        BatchSize::Sampled(size) => ds.sample_minibatch(size, rng),
    };
    let pts = match (cfg.gamma, init) {
        (Some(_), Some(spec)) => Some(spec.sample(cfg.batch, rng)),
        _ => None,
    };
    (mb, pts)
}

/// Objective and normalization seen by the last inner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSummary {
    pub objective: f64,
    pub mean_tau: f64,
}

/// `inner_steps` steps of descent on `theta` and ascent on `v` against the
/// frozen reference.
pub fn inner_optimize<R: Rng + ?Sized>(
    st: &mut SaddleState,
    ds: &TransitionDataset,
    init: Option<&InitialTermSpec>,
    cfg: &VpmConfig,
    rng: &mut R,
) -> Result<Option<InnerSummary>> {
    let mut summary = None;
    for _ in 0..cfg.inner_steps {
        let (mb, pts) = draw_batch(ds, init, cfg, rng);
        let lg = loss_and_grads(st, &mb, pts.as_deref(), cfg)?;
        let delta = cfg.optimizer.step(&mut st.theta_moments, &lg.g_theta.g, cfg.lr_theta);
        let descent: Vec<f64> = delta.iter().map(|d| -d).collect();
        st.model.apply_update(&descent)?;
        let dv = cfg.optimizer.step(&mut st.v_moments, &[lg.g_v], cfg.lr_v)[0];
        st.v += dv;
        if !st.v.is_finite() {
            return Err(Error::NonFiniteTerm {
                term: "dual variable",
                step: st.outer_step,
            });
        }
        summary = Some(InnerSummary {
            objective: lg.objective,
            mean_tau: lg.mean_tau,
        });
    }
    Ok(summary)
}

/// One diagnostics row per outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub outer_step: usize,
    pub objective: f64,
    pub mean_tau: f64,
    pub v: f64,
    pub alpha: f64,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticsRow>,
}

impl Diagnostics {
    /// Metric names in first-seen order.
    pub fn metric_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for row in &self.rows {
            for (name, _) in &row.metrics {
                if !names.contains(name) {
                    names.push(name.clone());
                }
            }
        }
        names
    }

    /// CSV with columns `outer_step,J,E_p_tau,v,alpha` followed by every
    /// metric; missing metrics are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let names = self.metric_names();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["outer_step".to_string(), "J".into(), "E_p_tau".into(), "v".into(), "alpha".into()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.outer_step.to_string(),
                format!("{:?}", row.objective),
                format!("{:?}", row.mean_tau),
                format!("{:?}", row.v),
                format!("{:?}", row.alpha),
            ];
            for name in &names {
                rec.push(
                    row.metrics
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, v)| format!("{v:?}"))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VpmRun {
    pub model: RatioModel,
    pub v: f64,
    pub diagnostics: Diagnostics,
}

/// Per-outer-step callback producing named metrics for the trained model.
pub type MetricHook<'a> = dyn FnMut(usize, &RatioModel) -> Result<Vec<(String, f64)>> + 'a;

/// Learns `tau ~ mu / p` for the stationary distribution.
pub fn run_vpm(ds: &TransitionDataset, model: RatioModel, cfg: &VpmConfig) -> Result<VpmRun> {
    if cfg.gamma.is_some() {
        return Err(Error::InvalidParameter(
            "discounted configuration needs an initial-term spec".into(),
        ));
    }
    run_vpm_with_hook(ds, None, model, cfg, &mut |_, _| Ok(Vec::new()))
}

/// Learns the discounted occupancy ratio `tau ~ d_gamma / p`.
pub fn run_vpm_discounted(
    ds: &TransitionDataset,
    init: &InitialTermSpec,
    model: RatioModel,
    cfg: &VpmConfig,
) -> Result<VpmRun> {
    if cfg.gamma.is_none() {
        return Err(Error::InvalidParameter("discounted run needs gamma".into()));
    }
    run_vpm_with_hook(ds, Some(init), model, cfg, &mut |_, _| Ok(Vec::new()))
}

/// Full training loop with an optional metric hook called after every outer
/// step.
pub fn run_vpm_with_hook(
    ds: &TransitionDataset,
    init: Option<&InitialTermSpec>,
    model: RatioModel,
    cfg: &VpmConfig,
    hook: &mut MetricHook<'_>,
) -> Result<VpmRun> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty);
    }
    if ds.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            row: 0,
            expected: model.input_dim(),
            found: ds.dim(),
        });
    }
    let init = match (cfg.gamma, init) {
        (Some(_), None) => {
            return Err(Error::InvalidParameter("discounted run needs an initial-term spec".into()));
        }
        (Some(_), Some(spec)) => {
            if spec.dim() != ds.dim() {
                return Err(Error::DimensionMismatch {
                    row: 0,
                    expected: ds.dim(),
                    found: spec.dim(),
                });
            }
            Some(spec)
        }
        (None, _) => None,
    };
    let exact = match cfg.inner_solver {
        InnerSolver::Exact => {
            if model.kind() != ModelKind::Tabular {
                return Err(Error::InvalidParameter("exact inner solver needs a tabular model".into()));
            }
            Some(ExactSolver::new(&model, ds, init.map(|s| s.points()))?)
        }
        InnerSolver::Gradient => None,
    };

    let mut rng = seeded_rng(cfg.seed);
    let mut st = SaddleState::new(model);
    let mut diagnostics = Diagnostics::default();
    for t in 0..cfg.outer_steps {
        st.outer_step = t;
        st.reference = st.model.snapshot();
        if !cfg.warm_start_v {
            st.v = 0.0;
            st.v_moments.reset();
        }
        let alpha = st.alpha(cfg);
        let summary = match &exact {
            Some(solver) => {
                let tau_t = st.reference.tabular_values().expect("tabular reference");
                let res = solver.solve(&tau_t, alpha, cfg.discount(), cfg.lambda)?;
                st.model.set_tabular_values(&res.tau)?;
                st.v = res.v;
                InnerSummary {
                    objective: res.objective,
                    mean_tau: res.mean_tau,
                }
            }
            None => match inner_optimize(&mut st, ds, init, cfg, &mut rng)? {
                Some(s) => s,
                None => unreachable!("validated configs run at least one inner step"),
            },
        };
        let metrics = hook(t, &st.model)?;
        let row = DiagnosticsRow {
            outer_step: t,
            objective: summary.objective,
            mean_tau: summary.mean_tau,
            v: st.v,
            alpha,
            metrics,
        };
        let checks = [("objective", row.objective), ("E_p[tau]", row.mean_tau), ("dual variable", row.v)];
        for (term, value) in checks {
            if !value.is_finite() {
                return Err(Error::NonFiniteTerm { term, step: t });
            }
        }
        if row.metrics.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteTerm { term: "metric", step: t });
        }
        diagnostics.rows.push(row);
    }
    Ok(VpmRun {
        model: st.model,
        v: st.v,
        diagnostics,
    })
}

/// Self-normalized estimate `sum tau(x_i) f(x_i) / sum tau(x_i)` over the
/// x-column.
pub fn estimate_expectation<F: Fn(&[f64]) -> f64>(model: &RatioModel, ds: &TransitionDataset, f: F) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty);
    }
    let tau = model.value_batch(ds.xs())?;
    let (num, den) = tau
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(n, d), (i, &t)| (n + t * f(ds.x(i)), d + t));
    Ok(num / den)
}

/// Unnormalized estimate `(1/n) sum tau(x_i) f(x_i)`.
pub fn estimate_expectation_unnormalized<F: Fn(&[f64]) -> f64>(
    model: &RatioModel,
    ds: &TransitionDataset,
    f: F,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty);
    }
    let tau = model.value_batch(ds.xs())?;
    let sum: f64 = tau.iter().enumerate().map(|(i, &t)| t * f(ds.x(i))).sum();
    Ok(sum / ds.len() as f64)
}

/// Self-normalized reward estimate `sum tau(x_i) r_i / sum tau(x_i)`.
pub fn estimate_average_reward(model: &RatioModel, ds: &TransitionDataset) -> Result<f64> {
    let rewards = ds
        .rewards()
        .ok_or_else(|| Error::InvalidParameter("dataset carries no rewards".into()))?;
    let tau = model.value_batch(ds.xs())?;
    let num: f64 = tau.iter().zip(rewards).map(|(t, r)| t * r).sum();
    let den: f64 = tau.iter().sum();
    Ok(num / den)
}

/// A probe sample reweighted by a learned ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    dim: usize,
    points: Vec<f64>,
    raw: Vec<f64>,
    normalized: Vec<f64>,
}

impl WeightedSample {
    pub fn from_model(model: &RatioModel, points: Vec<f64>) -> Result<Self> {
        let raw = model.value_batch(&points)?;
        Self::from_weights(model.input_dim(), points, raw)
    }

    pub fn from_weights(dim: usize, points: Vec<f64>, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty);
        }
        if points.len() != raw.len() * dim {
            return Err(Error::LengthMismatch {
                what: "weighted sample points",
                expected: raw.len() * dim,
                found: points.len(),
            });
        }
        if let Some(i) = raw.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::NonFiniteCoordinate { term: "weight", index: i });
        }
        let total: f64 = raw.iter().sum();
        let normalized = raw.iter().map(|w| w / total).collect();
        Ok(WeightedSample {
            dim,
            points,
            raw,
            normalized,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// `count` points drawn with replacement proportionally to the weights.
    pub fn resample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let index = WeightedIndex::new(&self.raw).expect("weights are positive and finite");
        let mut out = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            let i = index.sample(rng);
            out.extend_from_slice(&self.points[i * self.dim..(i + 1) * self.dim]);
        }
        out
    }
}

#[cfg(test)]
mod tests;
