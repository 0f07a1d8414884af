//! A small gridworld MDP with exactly computable policy values.
//!
//! States are cells `s = row * width + col`; actions are up, down, left,
//! right. The intended move happens with probability `1 - slip`, otherwise a
//! uniformly random action is taken; moves off the grid leave the agent in
//! place. Entering the goal is rewarded, and from the goal every action resets
//! the agent to the start cell. Rewards depend on the current state only.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TabularPolicy, TransitionDataset};
use crate::tabular::{discounted_ratio_fixed_point, solve_stationary, ProbeVector, TabularChain};
use crate::{Error, Result};

pub const ACTIONS: usize = 4;
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub goal_reward: f64,
    pub step_reward: f64,
    pub gamma: f64,
    /// Weight of the uniform policy in the behavior mixture.
    pub behavior_mix: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        GridworldSpec {
            width: 5,
            height: 5,
            slip: 0.1,
            goal_reward: 20.0,
            step_reward: -1.0,
            gamma: 0.99,
            behavior_mix: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldMdp {
    pub width: usize,
    pub height: usize,
    pub slip: f64,
    pub start: usize,
    pub goal: usize,
    /// `r(s)`, independent of the action.
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub target: TabularPolicy,
    pub behavior: TabularPolicy,
    /// Initial state distribution.
    pub initial: Vec<f64>,
}

/// Exact quantities for the target policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Stationary law of the `(s, a)` chain, indexed `s * ACTIONS + a`.
    pub stationary: Vec<f64>,
    /// Normalized discounted occupancy over `(s, a)`.
    pub discounted: Vec<f64>,
    /// Long-run average reward.
    pub rho: f64,
    /// `(1 - gamma) sum_t gamma^t E[r_t]`.
    pub rho_gamma: f64,
}

impl GridworldMdp {
    /// The standard instance: start at the top-left cell, goal at the
    /// bottom-right; the target policy favors right and down (0.45 each,
    /// 0.05 for up and left); behavior mixes it with the uniform policy.
    pub fn from_spec(spec: &GridworldSpec) -> Result<Self> {
        if spec.width == 0 || spec.height == 0 || spec.width * spec.height < 2 {
            return Err(Error::InvalidParameter("gridworld needs at least two cells".into()));
        }
        if !(0.0..=1.0).contains(&spec.slip) {
            return Err(Error::InvalidParameter(format!("slip must lie in [0, 1], got {}", spec.slip)));
        }
        if !(spec.behavior_mix > 0.0 && spec.behavior_mix <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "behavior mix must lie in (0, 1], got {}",
                spec.behavior_mix
            )));
        }
        let states = spec.width * spec.height;
        let goal = states - 1;
        let mut rewards = vec![spec.step_reward; states];
        rewards[goal] = spec.goal_reward;
        let mut pi_row = [0.0; ACTIONS];
        pi_row[UP] = 0.05;
        pi_row[LEFT] = 0.05;
        pi_row[DOWN] = 0.45;
        pi_row[RIGHT] = 0.45;
        let target = TabularPolicy::new(vec![pi_row.to_vec(); states])?;
        let behavior = mix_with_uniform(&target, spec.behavior_mix)?;
        let mut initial = vec![0.0; states];
        initial[0] = 1.0;
        Self::new(spec.width, spec.height, spec.slip, 0, goal, rewards, spec.gamma, target, behavior, initial)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        slip: f64,
        start: usize,
        goal: usize,
        rewards: Vec<f64>,
        gamma: f64,
        target: TabularPolicy,
        behavior: TabularPolicy,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let states = width * height;
        if start >= states || goal >= states {
            return Err(Error::InvalidParameter("start and goal must be grid cells".into()));
        }
        for (what, len) in [
            ("rewards", rewards.len()),
            ("target policy", target.states()),
            ("behavior policy", behavior.states()),
            ("initial distribution", initial.len()),
        ] {
            if len != states {
                return Err(Error::LengthMismatch {
                    what,
                    expected: states,
                    found: len,
                });
            }
        }
        if target.actions() != ACTIONS || behavior.actions() != ACTIONS {
            return Err(Error::InvalidParameter("policies must cover the four moves".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("initial distribution must be a probability vector".into()));
        }
        Ok(GridworldMdp {
            width,
            height,
            slip,
            start,
            goal,
            rewards,
            gamma,
            target,
            behavior,
            initial,
        })
    }

    pub fn states(&self) -> usize {
        self.width * self.height
    }

    pub fn pairs(&self) -> usize {
        self.states() * ACTIONS
    }

    fn moved(&self, s: usize, action: usize) -> usize {
        let (r, c) = (s / self.width, s % self.width);
        let (r, c) = match action {
            UP if r > 0 => (r - 1, c),
            DOWN if r + 1 < self.height => (r + 1, c),
            LEFT if c > 0 => (r, c - 1),
            RIGHT if c + 1 < self.width => (r, c + 1),
            _ => (r, c),
        };
        r * self.width + c
    }

    /// `P(. | s, a)` as a dense row over states.
    pub fn next_state_law(&self, s: usize, a: usize) -> Vec<f64> {
        let mut law = vec![0.0; self.states()];
        if s == self.goal {
            law[self.start] = 1.0;
            return law;
        }
        law[self.moved(s, a)] += 1.0 - self.slip;
        for b in 0..ACTIONS {
            law[self.moved(s, b)] += self.slip / ACTIONS as f64;
        }
        law
    }

    pub fn reward(&self, s: usize) -> f64 {
        self.rewards[s]
    }

    /// Kernel of the `(s, a)` chain when actions follow `policy`.
    pub fn pair_chain(&self, policy: &TabularPolicy) -> Result<TabularChain> {
        let n = self.pairs();
        let mut kernel = vec![0.0; n * n];
        for s in 0..self.states() {
            for a in 0..ACTIONS {
                let row = &mut kernel[(s * ACTIONS + a) * n..(s * ACTIONS + a + 1) * n];
                for (s2, &q) in self.next_state_law(s, a).iter().enumerate() {
                    if q == 0.0 {
                        continue;
                    }
                    for a2 in 0..ACTIONS {
                        row[s2 * ACTIONS + a2] += q * policy.prob(s2, a2);
                    }
                }
            }
        }
        TabularChain::new(n, kernel)
    }

    /// `mu0(s) pi(a | s)` over pairs.
    pub fn initial_pair_law(&self) -> Vec<f64> {
        let mut law = vec![0.0; self.pairs()];
        for s in 0..self.states() {
            for a in 0..ACTIONS {
                law[s * ACTIONS + a] = self.initial[s] * self.target.prob(s, a);
            }
        }
        law
    }

    /// `r` over pairs.
    pub fn pair_rewards(&self) -> Vec<f64> {
        (0..self.pairs()).map(|k| self.rewards[k / ACTIONS]).collect()
    }

    /// `count` draws of `(s0, a0)` with `s0 ~ mu0`, `a0 ~ pi(. | s0)`,
    /// row-major `2 x count`.
    pub fn sample_initial_pairs<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let init = WeightedIndex::new(&self.initial).expect("initial law has mass");
        let mut out = Vec::with_capacity(2 * count);
        for _ in 0..count {
            let s = init.sample(rng);
            let a = self.target.sample_index(s, rng);
            out.push(s as f64);
            out.push(a as f64);
        }
        out
    }
}

/// `(1 - mix) policy + mix uniform`.
pub fn mix_with_uniform(policy: &TabularPolicy, mix: f64) -> Result<TabularPolicy> {
    let u = 1.0 / policy.actions() as f64;
    let rows = (0..policy.states())
        .map(|s| policy.row(s).iter().map(|&p| (1.0 - mix) * p + mix * u).collect())
        .collect();
    TabularPolicy::new(rows)
}

/// Rolls out the behavior policy: `n_traj` trajectories of `len` steps from
/// `mu0`, recording `x = (s, a)`, `r(s)` and `x' = (s', a' ~ pi(. | s'))`.
pub fn gridworld_make_dataset<R: Rng + ?Sized>(
    g: &GridworldMdp,
    n_traj: usize,
    len: usize,
    rng: &mut R,
) -> Result<TransitionDataset> {
    if n_traj == 0 || len == 0 {
        return Err(Error::Empty);
    }
    let init = WeightedIndex::new(&g.initial).expect("initial law has mass");
    let laws: Vec<WeightedIndex<f64>> = (0..g.states())
        .flat_map(|s| (0..ACTIONS).map(move |a| (s, a)))
        .map(|(s, a)| WeightedIndex::new(g.next_state_law(s, a)).expect("rows have mass"))
        .collect();
    let n = n_traj * len;
    let mut xs = Vec::with_capacity(2 * n);
    let mut xps = Vec::with_capacity(2 * n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n_traj {
        let mut s = init.sample(rng);
        for _ in 0..len {
            let a = g.behavior.sample_index(s, rng);
            let s2 = laws[s * ACTIONS + a].sample(rng);
            let a2 = g.target.sample_index(s2, rng);
            xs.extend_from_slice(&[s as f64, a as f64]);
            xps.extend_from_slice(&[s2 as f64, a2 as f64]);
            rewards.push(g.reward(s));
            s = s2;
        }
    }
    TransitionDataset::from_flat(2, xs, xps, Some(rewards))
}

/// Exact stationary and discounted values of the target policy.
pub fn gridworld_ground_truth(g: &GridworldMdp) -> Result<GroundTruth> {
    let chain = g.pair_chain(&g.target)?;
    let (stationary, _) = solve_stationary(&chain, 1e-15, 10_000_000)?;
    let r = g.pair_rewards();
    let rho = stationary.iter().zip(&r).map(|(d, r)| d * r).sum();
    let probe = ProbeVector::uniform(g.pairs());
    let joint = chain.joint(&probe);
    let tau = discounted_ratio_fixed_point(&joint, &probe, &g.initial_pair_law(), g.gamma)?;
    let discounted: Vec<f64> = tau.as_slice().iter().zip(probe.as_slice()).map(|(t, p)| t * p).collect();
    let rho_gamma = discounted.iter().zip(&r).map(|(d, r)| d * r).sum();
    Ok(GroundTruth {
        stationary,
        discounted,
        rho,
        rho_gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn default_instance_is_valid_and_ergodic() {
        let g = GridworldMdp::from_spec(&GridworldSpec::default()).unwrap();
        assert_eq!(g.pairs(), 100);
        let beta = g.pair_chain(&g.behavior).unwrap();
        assert!(solve_stationary(&beta, 1e-13, 1_000_000).is_ok());
        let truth = gridworld_ground_truth(&g).unwrap();
        assert!((truth.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((truth.discounted.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(truth.rho > -1.0 && truth.rho < 20.0);
    }

    #[test]
    fn constant_reward_gives_constant_value() {
        let g = GridworldMdp::from_spec(&GridworldSpec {
            goal_reward: 3.5,
            step_reward: 3.5,
            ..GridworldSpec::default()
        })
        .unwrap();
        let truth = gridworld_ground_truth(&g).unwrap();
        assert!((truth.rho - 3.5).abs() < 1e-10);
        assert!((truth.rho_gamma - 3.5).abs() < 1e-9);
    }

    #[test]
    fn zero_discount_is_the_initial_reward() {
        let g = GridworldMdp::from_spec(&GridworldSpec {
            gamma: 0.0,
            ..GridworldSpec::default()
        })
        .unwrap();
        let truth = gridworld_ground_truth(&g).unwrap();
        let expected: f64 = g.initial_pair_law().iter().zip(g.pair_rewards()).map(|(m, r)| m * r).sum();
        assert!((truth.rho_gamma - expected).abs() < 1e-12);
    }

    #[test]
    fn walls_and_reset() {
        let g = GridworldMdp::from_spec(&GridworldSpec {
            slip: 0.0,
            ..GridworldSpec::default()
        })
        .unwrap();
        assert_eq!(g.next_state_law(0, UP)[0], 1.0);
        assert_eq!(g.next_state_law(0, RIGHT)[1], 1.0);
        assert_eq!(g.next_state_law(0, DOWN)[5], 1.0);
        assert_eq!(g.next_state_law(g.goal, LEFT)[g.start], 1.0);
    }

    #[test]
    fn rollout_average_matches_exact_value() {
        // 3x3, no slip, a hand-set deterministic-ish target policy.
        let mut rows = vec![vec![0.0, 0.0, 0.0, 1.0]; 9];
        for s in [2, 5] {
            rows[s] = vec![0.0, 1.0, 0.0, 0.0];
        }
        rows[4] = vec![0.0, 0.5, 0.0, 0.5];
        // Bumping into the top wall gives a self-loop, so the chain is aperiodic.
        rows[0] = vec![0.5, 0.0, 0.0, 0.5];
        let target = TabularPolicy::new(rows).unwrap();
        let mut rewards = vec![-1.0; 9];
        rewards[8] = 10.0;
        let mut initial = vec![0.0; 9];
        initial[0] = 1.0;
        let g = GridworldMdp::new(3, 3, 0.0, 0, 8, rewards, 0.9, target.clone(), target, initial).unwrap();
        let truth = gridworld_ground_truth(&g).unwrap();
        let mut rng = seeded_rng(5);
        let steps = 1_000_000;
        let mut s = 0;
        let mut total = 0.0;
        for _ in 0..steps {
            total += g.reward(s);
            let a = g.target.sample_index(s, &mut rng);
            let law = g.next_state_law(s, a);
            s = WeightedIndex::new(&law).unwrap().sample(&mut rng);
        }
        let avg = total / steps as f64;
        assert!((avg - truth.rho).abs() < 1e-2, "{avg} vs {}", truth.rho);
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let g = GridworldMdp::from_spec(&GridworldSpec::default()).unwrap();
        let a = gridworld_make_dataset(&g, 3, 50, &mut seeded_rng(6)).unwrap();
        let b = gridworld_make_dataset(&g, 3, 50, &mut seeded_rng(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 150);
        assert_eq!(a.dim(), 2);
        assert!(a.has_rewards());
        assert_eq!(a.x(0)[0], 0.0);
        for row in 0..a.len() - 1 {
            if (row + 1) % 50 != 0 {
                assert_eq!(a.xp(row)[0], a.x(row + 1)[0]);
            }
        }
    }
}
