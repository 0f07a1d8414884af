//! Bounded-probe queue: stationary law of a birth-death queue recovered from
//! uniformly probed one-step transitions, against a count-model simulation.

use std::time::Instant;

use vpm::environments::{queue_make_dataset, queue_stationary, QueueParams};
use vpm::metrics::{kl_divergence, FiniteDistribution, DEFAULT_KL_FLOOR};
use vpm::tabular::cast_state;
use vpm::vpm::run_vpm_with_hook;

use super::{build_model, rng_for, stream, vpm_config, Report, RunTrace};
use crate::baseline::{count_transition_model, simulate_chain};
use crate::config::ExperimentConfig;
use crate::error::{CliResult, Context};

pub(crate) fn params(cfg: &ExperimentConfig) -> CliResult<QueueParams> {
    let q = &cfg.queue;
    let qp = QueueParams::with_default_bound(q.q_a, q.q_f)?;
    Ok(match q.bound {
        Some(bound) => QueueParams::new(q.q_a, q.q_f, bound)?,
        None => qp,
    })
}

/// Estimated law on `[0, bound)`: `tau_i` times the probe frequency of `i`.
fn reweighted(tau: &[f64], probe: &[f64]) -> vpm::Result<FiniteDistribution> {
    let w: Vec<f64> = probe.iter().zip(tau).map(|(p, t)| p * t).collect();
    FiniteDistribution::from_weights(&w)
}

fn divergence(truth: &FiniteDistribution, est: &FiniteDistribution, reverse: bool) -> vpm::Result<f64> {
    if reverse {
        kl_divergence(est, truth, DEFAULT_KL_FLOOR)
    } else {
        kl_divergence(truth, est, DEFAULT_KL_FLOOR)
    }
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<Report> {
    let qp = params(cfg)?;
    let bound = qp.bound;
    let reverse = cfg.queue.reverse_kl;
    // x' can leave the probe range by one.
    let states = bound + 1;
    let truth = FiniteDistribution::new(queue_stationary(qp.q_a, qp.q_f, bound)?)?;
    let mut report = Report::default();

    for (sub, &n) in cfg.queue.sizes.iter().enumerate() {
        let setting = format!("n={n}");
        let sub = sub as u64;
        let ds = queue_make_dataset(&qp, n, &mut rng_for(seed, stream::DATA, sub)).at(seed, &setting)?;
        let from = (0..n).map(|i| cast_state(ds.x(i)[0], states, i)).collect::<vpm::Result<Vec<_>>>()?;
        let to = (0..n).map(|i| cast_state(ds.xp(i)[0], states, i)).collect::<vpm::Result<Vec<_>>>()?;
        let probe = FiniteDistribution::histogram(from.iter().copied(), bound)?;

        let started = Instant::now();
        let model = build_model(&cfg.model, 1, Some(vec![states]), &mut rng_for(seed, stream::MODEL, sub))?;
        let vcfg = vpm_config(cfg, seed, sub);
        let mut hook = |_: usize, m: &vpm::models::RatioModel| -> vpm::Result<Vec<(String, f64)>> {
            let tau = m.tabular_values().expect("tabular model");
            let kl = divergence(&truth, &reweighted(&tau, probe.probs())?, reverse)?;
            Ok(vec![("kl".into(), kl)])
        };
        let run = run_vpm_with_hook(&ds, None, model, &vcfg, &mut hook).at(seed, &setting)?;
        let tau = run.model.tabular_values().expect("tabular model");
        let kl = divergence(&truth, &reweighted(&tau, probe.probs())?, reverse)?;
        report.time(seed, &setting, "vpm", started.elapsed().as_secs_f64());
        report.push(seed, &setting, "vpm", "kl", kl);
        report.traces.push(RunTrace {
            seed,
            setting: setting.clone(),
            diagnostics: run.diagnostics,
        });

        let started = Instant::now();
        let chain = count_transition_model(&from, &to, states)?;
        let end = simulate_chain(
            &chain,
            &from,
            cfg.queue.baseline_steps,
            &mut rng_for(seed, stream::BASELINE, sub),
        );
        let simulated = FiniteDistribution::histogram(end, bound)?;
        let kl = divergence(&truth, &simulated, reverse)?;
        report.time(seed, &setting, "model_based", started.elapsed().as_secs_f64());
        report.push(seed, &setting, "model_based", "kl", kl);
    }
    Ok(report)
}
