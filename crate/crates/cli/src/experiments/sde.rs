//! Ornstein-Uhlenbeck particles: at each checkpoint, reweight a short
//! trailing window of the Euler-Maruyama path and compare with the
//! particles' current positions.

use std::time::Instant;

use vpm::environments::{ou_advance, ou_stationary_sampler, OuParams};
use vpm::metrics::mmd_gaussian;
use vpm::vpm::{run_vpm, WeightedSample};
use vpm::data::TransitionDataset;

use super::{build_model, rng_for, stream, vpm_config, Report, RunTrace};
use crate::config::{ExperimentConfig, SdeConfig};
use crate::error::{CliResult, Context};

/// Evaluation times `c * steps / checkpoints` for `c = 1..=checkpoints`.
pub fn checkpoint_times(s: &SdeConfig) -> Vec<usize> {
    (1..=s.checkpoints).map(|c| c * s.steps / s.checkpoints).collect()
}

/// Number of trailing steps used as training data at time `t`.
pub fn window_len(t: usize, fraction: f64) -> usize {
    ((t as f64 * fraction).round() as usize).clamp(1, t)
}

/// Offsets into a window of `w` steps kept for evaluation, newest first,
/// evenly strided so at most `keep` remain.
pub fn thinned_offsets(w: usize, keep: usize) -> Vec<usize> {
    let stride = w.div_ceil(keep);
    (0..w).rev().step_by(stride).collect()
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<Report> {
    let s = &cfg.sde;
    let op = OuParams::new(s.mu, s.sigma, s.theta, s.dt)?;
    let n = s.particles;
    let mut rng = rng_for(seed, stream::DATA, 0);
    let mut path: Vec<Vec<f64>> = Vec::with_capacity(s.steps + 1);
    path.push((0..n).map(|i| (i as f64 + 0.5) / n as f64).collect());
    for _ in 0..s.steps {
        let mut next = path.last().expect("path starts nonempty").clone();
        ou_advance(&mut next, &op, &mut rng);
        path.push(next);
    }

    let mut report = Report::default();
    for (c, t) in checkpoint_times(s).into_iter().enumerate() {
        let setting = format!("step={t}");
        let c = c as u64;
        let w = window_len(t, s.window_fraction);
        let xs: Vec<f64> = path[t - w..t].concat();
        let xps: Vec<f64> = path[t - w + 1..=t].concat();
        let ds = TransitionDataset::from_flat(1, xs, xps, None).at(seed, &setting)?;

        let started = Instant::now();
        let model = build_model(&cfg.model, 1, None, &mut rng_for(seed, stream::MODEL, c))?;
        let run = run_vpm(&ds, model, &vpm_config(cfg, seed, c)).at(seed, &setting)?;
        report.time(seed, &setting, "vpm", started.elapsed().as_secs_f64());

        let mut truth_rng = rng_for(seed, stream::TRUTH, c);
        let truth: Vec<f64> = (0..s.true_sample).map(|_| ou_stationary_sampler(&op, &mut truth_rng)).collect();
        let eval: Vec<f64> = thinned_offsets(w, s.eval_steps)
            .into_iter()
            .flat_map(|k| path[t - w + k].iter().copied())
            .collect();
        let weighted = WeightedSample::from_model(&run.model, eval).at(seed, &setting)?;
        let vpm_mmd = mmd_gaussian(weighted.points(), &truth, 1, Some(weighted.normalized())).at(seed, &setting)?;
        let em_mmd = mmd_gaussian(&path[t], &truth, 1, None).at(seed, &setting)?;
        let pooled_mmd = mmd_gaussian(weighted.points(), &truth, 1, None).at(seed, &setting)?;
        report.push(seed, &setting, "vpm", "mmd", vpm_mmd);
        report.push(seed, &setting, "em", "mmd", em_mmd);
        report.push(seed, &setting, "pooled", "mmd", pooled_mmd);
        report.traces.push(RunTrace {
            seed,
            setting,
            diagnostics: run.diagnostics,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_are_even_and_end_at_the_last_step() {
        let s = SdeConfig::default();
        let times = checkpoint_times(&s);
        assert_eq!(times.len(), 10);
        assert_eq!(times[0], 200);
        assert_eq!(*times.last().unwrap(), 2000);
    }

    #[test]
    fn windows_and_thinning() {
        assert_eq!(window_len(200, 0.01), 2);
        assert_eq!(window_len(10, 0.01), 1);
        assert_eq!(window_len(2000, 0.01), 20);
        assert_eq!(thinned_offsets(20, 4), vec![19, 14, 9, 4]);
        assert_eq!(thinned_offsets(2, 4), vec![1, 0]);
        assert_eq!(thinned_offsets(6, 4), vec![5, 3, 1]);
    }
}
