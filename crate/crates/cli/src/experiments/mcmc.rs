//! One-step HMC transitions from uniform box probes: reweight the probes
//! toward the target density and compare with long-run HMC particles.

use std::time::Instant;

use rand::seq::index::sample;
use vpm::environments::{hmc_reference_sample, potentials_make_dataset, PotentialSpec};
use vpm::metrics::mmd_gaussian;
use vpm::vpm::{run_vpm, WeightedSample};

use super::{build_model, rng_for, stream, vpm_config, Report, RunTrace};
use crate::baseline::GaussianTransitionModel;
use crate::config::ExperimentConfig;
use crate::error::{CliResult, Context};

const DIM: usize = 2;

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> CliResult<Report> {
    let m = &cfg.mcmc;
    let mut report = Report::default();
    for (sub, &kind) in m.potentials.iter().enumerate() {
        let setting = kind.name();
        let sub = sub as u64;
        let pot = PotentialSpec::new(kind);
        let ds = potentials_make_dataset(&pot, m.n, &mut rng_for(seed, stream::DATA, sub)).at(seed, setting)?;
        let truth = hmc_reference_sample(&pot, m.true_particles, m.true_steps, &mut rng_for(seed, stream::TRUTH, sub));

        let mut eval_rng = rng_for(seed, stream::EVAL, sub);
        let probe: Vec<f64> = sample(&mut eval_rng, ds.len(), m.eval_size.min(ds.len()))
            .into_iter()
            .flat_map(|i| ds.x(i).iter().copied())
            .collect();
        let probe_mmd = mmd_gaussian(&probe, &truth, DIM, None).at(seed, setting)?;
        report.push(seed, setting, "probe", "mmd", probe_mmd);

        let started = Instant::now();
        let model = build_model(&cfg.model, DIM, None, &mut rng_for(seed, stream::MODEL, sub))?;
        let run = run_vpm(&ds, model, &vpm_config(cfg, seed, sub)).at(seed, setting)?;
        report.time(seed, setting, "vpm", started.elapsed().as_secs_f64());
        let weighted = WeightedSample::from_model(&run.model, ds.xs().to_vec()).at(seed, setting)?;
        let resampled = weighted.resample(m.eval_size, &mut eval_rng);
        let vpm_mmd = mmd_gaussian(&resampled, &truth, DIM, None).at(seed, setting)?;
        report.push(seed, setting, "vpm", "mmd", vpm_mmd);
        report.traces.push(RunTrace {
            seed,
            setting: setting.to_string(),
            diagnostics: run.diagnostics,
        });

        if m.baseline.enabled {
            let started = Instant::now();
            let mut rng = rng_for(seed, stream::BASELINE, sub);
            let fitted = GaussianTransitionModel::fit(&ds, &m.baseline, &mut rng).at(seed, setting)?;
            let end = fitted.rollout(&probe, m.baseline.steps, &mut rng);
            report.time(seed, setting, "model_based", started.elapsed().as_secs_f64());
            let mmd = mmd_gaussian(&end, &truth, DIM, None).at(seed, setting)?;
            report.push(seed, setting, "model_based", "mmd", mmd);
        }
    }
    Ok(report)
}
