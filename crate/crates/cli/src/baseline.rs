//! Model-based baselines: estimate the transition kernel from the same data,
//! then simulate it forward.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use vpm::data::TransitionDataset;
use vpm::models::{Activation, Network};
use vpm::tabular::TabularChain;
use vpm::vpm::{AdamMoments, Optimizer};
use vpm::{Error, Result};

use crate::config::McmcBaselineConfig;

/// Row-normalized transition counts over `[0, states)`. States never seen
/// as a source keep all their mass in place.
pub fn count_transition_model(from: &[usize], to: &[usize], states: usize) -> Result<TabularChain> {
    if from.len() != to.len() {
        return Err(Error::LengthMismatch {
            what: "transition targets",
            expected: from.len(),
            found: to.len(),
        });
    }
    let mut counts = vec![0.0; states * states];
    for (row, (&i, &j)) in from.iter().zip(to).enumerate() {
        if i >= states || j >= states {
            return Err(Error::InvalidState {
                row,
                value: i.max(j) as f64,
                states,
            });
        }
        counts[i * states + j] += 1.0;
    }
    for (i, row) in counts.chunks_exact_mut(states).enumerate() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|c| *c /= total);
        } else {
            row[i] = 1.0;
        }
    }
    TabularChain::new(states, counts)
}

/// Runs one particle per start for `steps` transitions of `chain`.
pub fn simulate_chain<R: Rng + ?Sized>(chain: &TabularChain, starts: &[usize], steps: usize, rng: &mut R) -> Vec<usize> {
    let laws: Vec<WeightedIndex<f64>> = (0..chain.states())
        .map(|i| WeightedIndex::new(chain.row(i)).expect("stochastic rows have mass"))
        .collect();
    starts
        .iter()
        .map(|&s| {
            let mut x = s;
            for _ in 0..steps {
                x = laws[x].sample(rng);
            }
            x
        })
        .collect()
}

/// `x' ~ N(m(x), spread^2 I)` with the mean `m` a dense network fitted by
/// least squares.
#[derive(Debug, Clone)]
pub struct GaussianTransitionModel {
    net: Network,
    params: Vec<f64>,
    spread: f64,
}

impl GaussianTransitionModel {
    /// Fits the mean network with Adam on minibatches of squared error.
    pub fn fit<R: Rng + ?Sized>(ds: &TransitionDataset, cfg: &McmcBaselineConfig, rng: &mut R) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Empty);
        }
        let d = ds.dim();
        let mut sizes = vec![d];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(d);
        let net = Network::new(sizes, Activation::Relu);
        let mut params = net.init_params(1.0, rng);
        let optimizer = Optimizer::adam_default();
        let mut moments = AdamMoments::zeros(params.len());
        for step in 0..cfg.iterations {
            let mb = ds.sample_minibatch(cfg.batch, rng);
            let trace = net.forward(&params, mb.xs());
            let scale = 1.0 / mb.len() as f64;
            let d_out: Vec<f64> = trace.output().iter().zip(mb.xps()).map(|(m, y)| (m - y) * scale).collect();
            let mut grad = vec![0.0; params.len()];
            net.backward(&params, &trace, &d_out, &mut grad);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteTerm {
                    term: "baseline gradient",
                    step,
                });
            }
            let delta = optimizer.step(&mut moments, &grad, cfg.lr);
            params.iter_mut().zip(&delta).for_each(|(p, d)| *p -= d);
        }
        Ok(GaussianTransitionModel {
            net,
            params,
            spread: cfg.spread,
        })
    }

    /// Predicted means, row-major.
    pub fn mean(&self, xs: &[f64]) -> Vec<f64> {
        self.net.forward(&self.params, xs).output().to_vec()
    }

    /// Applies the fitted transition `steps` times to every start point.
    pub fn rollout<R: Rng + ?Sized>(&self, starts: &[f64], steps: usize, rng: &mut R) -> Vec<f64> {
        let mut xs = starts.to_vec();
        for _ in 0..steps {
            xs = self.mean(&xs);
            for x in &mut xs {
                *x += self.spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
        xs
    }
}
