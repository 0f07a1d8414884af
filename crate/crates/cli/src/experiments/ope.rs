//! Off-policy evaluation on the gridworld: average and discounted reward of
//! the target policy from behavior-policy trajectories.

use std::time::Instant;

use vpm::data::TransitionDataset;
use vpm::environments::gridworld::ACTIONS;
use vpm::environments::{gridworld_ground_truth, gridworld_make_dataset, GridworldMdp, GridworldSpec};
use vpm::models::RatioModel;
use vpm::tabular::{discounted_ratio_fixed_point, solve_stationary, ProbeVector};
use vpm::vpm::{estimate_average_reward, run_vpm_with_hook, InitialTermSpec};

use super::{build_model, rng_for, stream, vpm_config, Report, RunTrace};
use crate::baseline::count_transition_model;
use crate::config::ExperimentConfig;
use crate::error::{CliResult, Context};

/// `None` is the average-reward setting.
pub fn settings(cfg: &ExperimentConfig) -> Vec<Option<f64>> {
    let mut out: Vec<Option<f64>> = Vec::new();
    if cfg.ope.average {
        out.push(None);
    }
    out.extend(cfg.ope.gammas.iter().map(|&g| Some(g)));
    out
}

pub fn setting_name(gamma: Option<f64>) -> String {
    match gamma {
        None => "average".into(),
        Some(g) => format!("gamma={g}"),
    }
}

/// Exact value of the target policy.
pub fn true_value(spec: &GridworldSpec, gamma: Option<f64>) -> vpm::Result<f64> {
    let g = GridworldMdp::from_spec(&GridworldSpec {
        gamma: gamma.unwrap_or(spec.gamma),
        ..spec.clone()
    })?;
    let truth = gridworld_ground_truth(&g)?;
    Ok(if gamma.is_some() { truth.rho_gamma } else { truth.rho })
}

/// Per-pair visit counts and reward sums over the x-column.
struct PairStats {
    index: Vec<usize>,
    next: Vec<usize>,
    counts: Vec<f64>,
    reward_sums: Vec<f64>,
}

impl PairStats {
    fn new(ds: &TransitionDataset, shape: &[usize]) -> vpm::Result<Self> {
        let lookup = RatioModel::tabular_from_values(shape.to_vec(), &vec![1.0; shape.iter().product()])?;
        let index = lookup.tabular_indices(ds.xs())?;
        let next = lookup.tabular_indices(ds.xps())?;
        let pairs = shape.iter().product();
        let mut counts = vec![0.0; pairs];
        let mut reward_sums = vec![0.0; pairs];
        let rewards = ds
            .rewards()
            .ok_or_else(|| vpm::Error::InvalidParameter("dataset carries no rewards".into()))?;
        for (&i, &r) in index.iter().zip(rewards) {
            counts[i] += 1.0;
            reward_sums[i] += r;
        }
        Ok(PairStats {
            index,
            next,
            counts,
            reward_sums,
        })
    }

    /// `sum tau r / sum tau` over the data, by pair.
    fn estimate(&self, tau: &[f64]) -> f64 {
        let num: f64 = tau.iter().zip(&self.reward_sums).map(|(t, r)| t * r).sum();
        let den: f64 = tau.iter().zip(&self.counts).map(|(t, c)| t * c).sum();
        num / den
    }

    /// Plug-in value of the count model with empirical mean rewards.
    fn model_based(&self, gamma: Option<f64>, mu0pi: &[f64]) -> vpm::Result<f64> {
        let pairs = self.counts.len();
        let chain = count_transition_model(&self.index, &self.next, pairs)?;
        let law = match gamma {
            None => solve_stationary(&chain, 1e-14, 10_000_000)?.0,
            Some(g) => {
                let probe = ProbeVector::uniform(pairs);
                let tau = discounted_ratio_fixed_point(&chain.joint(&probe), &probe, mu0pi, g)?;
                tau.distribution(&probe)
            }
        };
        Ok(law
            .iter()
            .zip(self.counts.iter().zip(&self.reward_sums))
            .map(|(d, (&c, &r))| if c > 0.0 { d * r / c } else { 0.0 })
            .sum())
    }
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<Report> {
    let o = &cfg.ope;
    let mdp = GridworldMdp::from_spec(&o.grid)?;
    let shape = vec![mdp.states(), ACTIONS];
    let ds = gridworld_make_dataset(&mdp, o.trajectories, o.horizon, &mut rng_for(seed, stream::DATA, 0))
        .at(seed, "data")?;
    let stats = PairStats::new(&ds, &shape).at(seed, "data")?;
    let behavior = ds.rewards().map(|r| r.iter().sum::<f64>() / r.len() as f64).unwrap_or(f64::NAN);
    let mu0pi = mdp.initial_pair_law();

    let mut report = Report::default();
    for (sub, gamma) in settings(cfg).into_iter().enumerate() {
        let setting = setting_name(gamma);
        let sub = sub as u64;
        let truth = true_value(&o.grid, gamma).at(seed, &setting)?;
        let record = |report: &mut Report, method: &str, estimate: f64| {
            report.push(seed, &setting, method, "estimate", estimate);
            report.push(seed, &setting, method, "truth", truth);
            report.push(seed, &setting, method, "rel_error", (estimate - truth).abs() / truth.abs());
        };

        let started = Instant::now();
        let model = build_model(&cfg.model, 2, Some(shape.clone()), &mut rng_for(seed, stream::MODEL, sub))?;
        let mut vcfg = vpm_config(cfg, seed, sub);
        vcfg.gamma = gamma;
        let init = match gamma {
            Some(_) => {
                let pool = mdp.sample_initial_pairs(o.init_pool, &mut rng_for(seed, stream::EVAL, sub));
                Some(InitialTermSpec::new(2, pool).at(seed, &setting)?)
            }
            None => None,
        };
        let tabular = model.tabular_values().is_some();
        let mut hook = |_: usize, m: &RatioModel| -> vpm::Result<Vec<(String, f64)>> {
            Ok(match m.tabular_values() {
                Some(tau) => vec![("estimate".into(), stats.estimate(&tau))],
                None => Vec::new(),
            })
        };
        let run = run_vpm_with_hook(&ds, init.as_ref(), model, &vcfg, &mut hook).at(seed, &setting)?;
        let estimate = if tabular {
            stats.estimate(&run.model.tabular_values().expect("tabular model"))
        } else {
            estimate_average_reward(&run.model, &ds).at(seed, &setting)?
        };
        report.time(seed, &setting, "vpm", started.elapsed().as_secs_f64());
        record(&mut report, "vpm", estimate);
        report.traces.push(RunTrace {
            seed,
            setting: setting.clone(),
            diagnostics: run.diagnostics,
        });

        let started = Instant::now();
        let estimate = stats.model_based(gamma, &mu0pi).at(seed, &setting)?;
        report.time(seed, &setting, "model_based", started.elapsed().as_secs_f64());
        record(&mut report, "model_based", estimate);
        record(&mut report, "behavior", behavior);
    }
    Ok(report)
}
