//! Nonnegative ratio models `tau_theta(x) = softplus(f_theta(x))`.
//!
//! Three parametrizations share one flat parameter vector interface:
//!
//! - [`Architecture::Tabular`]: one pre-activation scalar per discrete state.
//! - [`Architecture::Fourier`]: a linear head over fixed random Fourier
//!   features.
//! - [`Architecture::Mlp`]: a dense network with rectifier (or tanh) hidden
//!   layers.
//!
//! Gradients are exact reverse-mode products; optimizers only ever see
//! `&[f64]`.

mod network;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use network::{Activation, Network, NetworkTrace};

use crate::{Error, Result};

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Derivative of softplus, the logistic sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus on `(0, inf)`.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Tabular,
    Fourier,
    Mlp,
}

/// Architecture descriptor. Everything needed to rebuild a model from its
/// flat parameters; random Fourier frequencies are part of the descriptor,
/// not of `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Integer points indexed in mixed radix over `shape`.
    Tabular { shape: Vec<usize> },
    /// `f(x) = sum_k w_k sqrt(2/D) cos(omega_k . x + b_k) + c`.
    Fourier {
        input_dim: usize,
        bandwidth: f64,
        /// `D x input_dim`, row-major.
        frequencies: Vec<f64>,
        phases: Vec<f64>,
    },
    Mlp(Network),
}

impl Architecture {
    pub fn tabular(states: usize) -> Self {
        Architecture::Tabular {
            shape: vec![states],
        }
    }

    /// Random Fourier features for a Gaussian kernel of the given bandwidth.
    pub fn fourier<R: Rng + ?Sized>(input_dim: usize, features: usize, bandwidth: f64, rng: &mut R) -> Self {
        let frequencies = (0..features * input_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / bandwidth)
            .collect();
        let phases = (0..features)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Architecture::Fourier {
            input_dim,
            bandwidth,
            frequencies,
            phases,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Architecture::Mlp(Network::new(sizes, activation))
    }

    /// Two rectifier layers of 64 units, used for SDE and OPE tasks.
    pub fn mlp_small(input_dim: usize) -> Self {
        Self::mlp(input_dim, &[64, 64], Activation::Relu)
    }

    /// Four rectifier layers of 128 units, used for MCMC post-processing.
    pub fn mlp_large(input_dim: usize) -> Self {
        Self::mlp(input_dim, &[128, 128, 128, 128], Activation::Relu)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Architecture::Tabular { .. } => ModelKind::Tabular,
            Architecture::Fourier { .. } => ModelKind::Fourier,
            Architecture::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Architecture::Tabular { shape } => shape.len(),
            Architecture::Fourier { input_dim, .. } => *input_dim,
            Architecture::Mlp(net) => net.input_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Architecture::Tabular { shape } => shape.iter().product(),
            Architecture::Fourier { phases, .. } => phases.len() + 1,
            Architecture::Mlp(net) => net.param_count(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Architecture::Tabular { shape } => {
                if shape.is_empty() || shape.iter().any(|&s| s == 0) {
                    return Err(Error::InvalidParameter("tabular shape must be nonempty and positive".into()));
                }
            }
            Architecture::Fourier {
                input_dim,
                bandwidth,
                frequencies,
                phases,
            } => {
                if *input_dim == 0 || !(*bandwidth > 0.0) || frequencies.len() != phases.len() * input_dim {
                    return Err(Error::InvalidParameter("inconsistent Fourier feature descriptor".into()));
                }
            }
            Architecture::Mlp(net) => {
                if net.output_dim() != 1 {
                    return Err(Error::InvalidParameter("ratio network must have scalar output".into()));
                }
            }
        }
        Ok(())
    }
}

/// Flat gradient aligned with a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    pub g: Vec<f64>,
    pub samples: usize,
}

impl GradAccumulator {
    pub fn zeros(len: usize) -> Self {
        GradAccumulator {
            g: vec![0.0; len],
            samples: 0,
        }
    }

    pub fn check_finite(&self, term: &'static str) -> Result<()> {
        match self.g.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFiniteCoordinate { term, index }),
            None => Ok(()),
        }
    }
}

/// Pre-activations and internals kept from a forward pass for the matching
/// backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pre: Vec<f64>,
    values: Vec<f64>,
    cache: ForwardCache,
}

#[derive(Debug, Clone)]
enum ForwardCache {
    Tabular(Vec<usize>),
    Fourier(Vec<f64>),
    Mlp(NetworkTrace),
}

impl Forward {
    /// `tau_theta(x_k)` per point.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    architecture: Architecture,
    params: Vec<f64>,
}

impl RatioModel {
    /// Builds a model with the default initialization: uniform fan-in
    /// weights and an output bias of `softplus^-1(1)`, so `tau ~ 1`
    /// everywhere. Tabular and Fourier heads start exactly at 1.
    pub fn new<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        architecture.validate()?;
        let one = softplus_inverse(1.0);
        let params = match &architecture {
            Architecture::Tabular { .. } => vec![one; architecture.param_count()],
            Architecture::Fourier { phases, .. } => {
                let mut p = vec![0.0; phases.len() + 1];
                p[phases.len()] = one;
                p
            }
            Architecture::Mlp(net) => {
                let mut p = net.init_params(0.1, rng);
                let bias = net.output_bias_offset();
                p[bias] = one;
                p
            }
        };
        Ok(RatioModel {
            architecture,
            params,
        })
    }

    pub fn from_params(architecture: Architecture, params: Vec<f64>) -> Result<Self> {
        architecture.validate()?;
        if params.len() != architecture.param_count() {
            return Err(Error::LengthMismatch {
                what: "parameters",
                expected: architecture.param_count(),
                found: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                term: "parameter",
                index,
            });
        }
        Ok(RatioModel {
            architecture,
            params,
        })
    }

    /// A tabular model with the given per-state values (all positive).
    pub fn tabular_from_values(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut model = RatioModel::from_params(
            Architecture::Tabular { shape },
            vec![0.0; values.len()],
        )?;
        model.set_tabular_values(values)?;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn kind(&self) -> ModelKind {
        self.architecture.kind()
    }

    pub fn input_dim(&self) -> usize {
        self.architecture.input_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Overwrites a tabular model so that `tau(state) = values[state]`.
    pub fn set_tabular_values(&mut self, values: &[f64]) -> Result<()> {
        if self.kind() != ModelKind::Tabular {
            return Err(Error::InvalidParameter("not a tabular model".into()));
        }
        if values.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                what: "tabular values",
                expected: self.params.len(),
                found: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                term: "tabular value",
                index,
            });
        }
        for (p, &v) in self.params.iter_mut().zip(values) {
            *p = softplus_inverse(v);
        }
        Ok(())
    }

    /// `tau` at every state of a tabular model, in index order.
    pub fn tabular_values(&self) -> Option<Vec<f64>> {
        (self.kind() == ModelKind::Tabular).then(|| self.params.iter().map(|&p| softplus(p)).collect())
    }

    fn check_points(&self, xs: &[f64]) -> Result<usize> {
        let d = self.input_dim();
        if xs.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                row: xs.len() / d,
                expected: d,
                found: xs.len() % d,
            });
        }
        Ok(xs.len() / d)
    }

    /// Mixed-radix state index of every point of a tabular model.
    pub fn tabular_indices(&self, xs: &[f64]) -> Result<Vec<usize>> {
        let Architecture::Tabular { shape } = &self.architecture else {
            return Err(Error::InvalidParameter("not a tabular model".into()));
        };
        let n = self.check_points(xs)?;
        let mut idx = Vec::with_capacity(n);
        for (row, x) in xs.chunks_exact(shape.len()).enumerate() {
            let mut index = 0usize;
            for (&v, &size) in x.iter().zip(shape) {
                if v.fract() != 0.0 || v < 0.0 || v >= size as f64 {
                    return Err(Error::InvalidState {
                        row,
                        value: v,
                        states: size,
                    });
                }
                index = index * size + v as usize;
            }
            idx.push(index);
        }
        Ok(idx)
    }

    /// Forward pass over row-major points, keeping what the backward pass
    /// needs.
    pub fn forward(&self, xs: &[f64]) -> Result<Forward> {
        let n = self.check_points(xs)?;
        let (pre, cache) = match &self.architecture {
            Architecture::Tabular { .. } => {
                let idx = self.tabular_indices(xs)?;
                let pre = idx.iter().map(|&i| self.params[i]).collect();
                (pre, ForwardCache::Tabular(idx))
            }
            Architecture::Fourier {
                input_dim,
                frequencies,
                phases,
                ..
            } => {
                let d = *input_dim;
                let m = phases.len();
                let scale = (2.0 / m as f64).sqrt();
                let mut feats = vec![0.0; n * m];
                let mut pre = Vec::with_capacity(n);
                let bias = self.params[m];
                for (x, f_row) in xs.chunks_exact(d).zip(feats.chunks_exact_mut(m)) {
                    let mut acc = bias;
                    for (k, f) in f_row.iter_mut().enumerate() {
                        let omega = &frequencies[k * d..(k + 1) * d];
                        let arg: f64 = omega.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phases[k];
                        *f = scale * arg.cos();
                        acc += self.params[k] * *f;
                    }
                    pre.push(acc);
                }
                (pre, ForwardCache::Fourier(feats))
            }
            Architecture::Mlp(net) => {
                let trace = net.forward(&self.params, xs);
                (trace.output().to_vec(), ForwardCache::Mlp(trace))
            }
        };
        let values = pre.iter().map(|&z| softplus(z)).collect();
        Ok(Forward { pre, values, cache })
    }

    /// `tau_theta(x)` for each point.
    pub fn value_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(xs)?.values)
    }

    /// `sum_k w_k grad_theta tau_theta(x_k)` from a cached forward pass.
    pub fn backward(&self, fwd: &Forward, weights: &[f64]) -> Result<GradAccumulator> {
        if weights.len() != fwd.len() {
            return Err(Error::LengthMismatch {
                what: "gradient weights",
                expected: fwd.len(),
                found: weights.len(),
            });
        }
        // Chain rule through the softplus head.
        let d_pre: Vec<f64> = fwd.pre.iter().zip(weights).map(|(&z, &w)| w * sigmoid(z)).collect();
        let mut grad = GradAccumulator::zeros(self.params.len());
        grad.samples = fwd.len();
        match (&self.architecture, &fwd.cache) {
            (Architecture::Tabular { .. }, ForwardCache::Tabular(idx)) => {
                for (&i, &d) in idx.iter().zip(&d_pre) {
                    grad.g[i] += d;
                }
            }
            (Architecture::Fourier { phases, .. }, ForwardCache::Fourier(feats)) => {
                let m = phases.len();
                for (f_row, &d) in feats.chunks_exact(m).zip(&d_pre) {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &f) in grad.g[..m].iter_mut().zip(f_row) {
                        *g += d * f;
                    }
                    grad.g[m] += d;
                }
            }
            (Architecture::Mlp(net), ForwardCache::Mlp(trace)) => {
                net.backward(&self.params, trace, &d_pre, &mut grad.g);
            }
            _ => unreachable!("forward cache does not match the architecture"),
        }
        Ok(grad)
    }

    /// `sum_k w_k grad_theta tau_theta(x_k)`.
    pub fn weighted_value_gradient(&self, xs: &[f64], weights: &[f64]) -> Result<GradAccumulator> {
        let fwd = self.forward(xs)?;
        self.backward(&fwd, weights)
    }

    /// Deep copy used as the frozen reference model.
    pub fn snapshot(&self) -> RatioModel {
        self.clone()
    }

    /// `theta <- theta + delta`.
    pub fn apply_update(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                what: "parameter update",
                expected: self.params.len(),
                found: delta.len(),
            });
        }
        if let Some(index) = delta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoordinate {
                term: "update",
                index,
            });
        }
        for (p, d) in self.params.iter_mut().zip(delta) {
            *p += d;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RatioModel = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        RatioModel::from_params(raw.architecture, raw.params)
    }

    /// Writes the architecture descriptor and flat parameters as JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn models(rng: &mut crate::SeededRng) -> Vec<RatioModel> {
        vec![
            RatioModel::new(Architecture::tabular(6), rng).unwrap(),
            RatioModel::new(Architecture::fourier(2, 16, 1.5, rng), rng).unwrap(),
            RatioModel::new(Architecture::mlp(2, &[8, 8], Activation::Relu), rng).unwrap(),
        ]
    }

    fn perturb(model: &mut RatioModel, rng: &mut crate::SeededRng, scale: f64) {
        let delta: Vec<f64> = (0..model.param_count())
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        model.apply_update(&delta).unwrap();
    }

    fn points_for(model: &RatioModel, n: usize, rng: &mut crate::SeededRng) -> Vec<f64> {
        match model.kind() {
            ModelKind::Tabular => (0..n).map(|_| rng.random_range(0..6) as f64).collect(),
            _ => (0..n * model.input_dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        }
    }

    #[test]
    fn softplus_helpers() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(softplus_inverse(1.0)) - 1.0).abs() < 1e-15);
        assert!((softplus(softplus_inverse(1e-8)) - 1e-8).abs() < 1e-20);
        assert!(softplus(800.0).is_finite() && softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_network_gives_ln_two() {
        let arch = Architecture::mlp(3, &[4, 4], Activation::Relu);
        let n = arch.param_count();
        let model = RatioModel::from_params(arch, vec![0.0; n]).unwrap();
        for v in model.value_batch(&[0.3, -1.0, 2.0, 5.0, 5.0, 5.0]).unwrap() {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn tabular_initializes_at_one() {
        let model = RatioModel::new(Architecture::tabular(4), &mut seeded_rng(0)).unwrap();
        for v in model.value_batch(&[0.0, 1.0, 2.0, 3.0]).unwrap() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        assert!(model.value_batch(&[4.0]).is_err());
        assert!(model.value_batch(&[0.5]).is_err());
    }

    #[test]
    fn values_are_positive() {
        let mut rng = seeded_rng(1);
        for mut m in models(&mut rng) {
            perturb(&mut m, &mut rng, 3.0);
            let xs = points_for(&m, 50, &mut rng);
            assert!(m.value_batch(&xs).unwrap().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = seeded_rng(2);
        let m = RatioModel::new(Architecture::mlp(2, &[4], Activation::Relu), &mut rng).unwrap();
        assert!(matches!(m.value_batch(&[1.0, 2.0, 3.0]), Err(Error::DimensionMismatch { .. })));
        assert!(m.weighted_value_gradient(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seeded_rng(3);
        for mut m in models(&mut rng) {
            perturb(&mut m, &mut rng, 0.5);
            let x = points_for(&m, 1, &mut rng);
            let g = m.weighted_value_gradient(&x, &[1.0]).unwrap();
            let h = 1e-5;
            for k in 0..m.param_count() {
                let mut plus = m.clone();
                let mut minus = m.clone();
                let mut e = vec![0.0; m.param_count()];
                e[k] = h;
                plus.apply_update(&e).unwrap();
                e[k] = -h;
                minus.apply_update(&e).unwrap();
                let fd = (plus.value_batch(&x).unwrap()[0] - minus.value_batch(&x).unwrap()[0]) / (2.0 * h);
                let rel = (fd - g.g[k]).abs() / fd.abs().max(g.g[k].abs()).max(1e-6);
                assert!(rel < 1e-5, "{:?} param {k}: {fd} vs {}", m.kind(), g.g[k]);
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_weights() {
        let mut rng = seeded_rng(4);
        for m in models(&mut rng) {
            let x = points_for(&m, 1, &mut rng);
            let zero = m.weighted_value_gradient(&x, &[0.0]).unwrap();
            assert!(zero.g.iter().all(|&v| v == 0.0));
            let doubled: Vec<f64> = x.iter().chain(&x).copied().collect();
            let a = m.weighted_value_gradient(&doubled, &[1.0, 1.0]).unwrap();
            let b = m.weighted_value_gradient(&x, &[2.0]).unwrap();
            assert_eq!(a.g, b.g);
        }
    }

    #[test]
    fn snapshot_is_isolated_and_exact() {
        let mut rng = seeded_rng(5);
        for mut m in models(&mut rng) {
            let xs = points_for(&m, 100, &mut rng);
            let snap = m.snapshot();
            let snap2 = snap.snapshot();
            let before = m.value_batch(&xs).unwrap();
            assert_eq!(snap.value_batch(&xs).unwrap(), before);
            assert_eq!(snap2.value_batch(&xs).unwrap(), before);
            perturb(&mut m, &mut rng, 1.0);
            assert_eq!(snap.value_batch(&xs).unwrap(), before);
        }
    }

    #[test]
    fn update_round_trip_and_rejection() {
        let mut rng = seeded_rng(6);
        let mut m = RatioModel::new(Architecture::mlp(1, &[5], Activation::Tanh), &mut rng).unwrap();
        let original = m.params().to_vec();
        m.apply_update(&vec![0.0; m.param_count()]).unwrap();
        assert_eq!(m.params(), original.as_slice());
        // Doubling and halving are exact, so theta + theta - theta == theta.
        let d = original.clone();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        m.apply_update(&d).unwrap();
        m.apply_update(&neg).unwrap();
        assert_eq!(m.params(), original.as_slice());
        let mut bad = vec![0.0; m.param_count()];
        bad[3] = f64::NAN;
        match m.apply_update(&bad) {
            Err(Error::NonFiniteCoordinate { index, .. }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.apply_update(&[1.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = seeded_rng(7);
        for mut m in models(&mut rng) {
            perturb(&mut m, &mut rng, 1.0);
            let back = RatioModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
        }
    }
}
