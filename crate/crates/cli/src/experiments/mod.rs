//! Experiment runners. Each seed is an independent job producing long-form
//! result rows, per-outer-step traces and wall-clock timings; jobs run on a
//! rayon pool and are merged in seed order.

pub mod mcmc;
pub mod ope;
pub mod queue;
pub mod sde;

use rand::Rng;
use rayon::prelude::*;
use vpm::models::{Architecture, RatioModel};
use vpm::vpm::{Diagnostics, VpmConfig};
use vpm::{derive_seed, seeded_rng, SeededRng};

use crate::config::{Experiment, ExperimentConfig, ModelChoice, ModelConfig};
use crate::error::{CliError, CliResult};

/// Random stream tags; every stream is `derive_seed(seed, tag)`.
pub(crate) mod stream {
    pub const DATA: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const VPM: u64 = 3;
    pub const TRUTH: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const BASELINE: u64 = 6;
}

/// One metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub setting: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

/// Per-outer-step diagnostics of one VPM run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub seed: u64,
    pub setting: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub seed: u64,
    pub setting: String,
    pub method: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Vec<ResultRow>,
    pub traces: Vec<RunTrace>,
    pub timings: Vec<Timing>,
}

impl Report {
    pub(crate) fn push(&mut self, seed: u64, setting: &str, method: &str, metric: &str, value: f64) {
        self.results.push(ResultRow {
            seed,
            setting: setting.to_string(),
            method: method.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub(crate) fn time(&mut self, seed: u64, setting: &str, method: &str, seconds: f64) {
        self.timings.push(Timing {
            seed,
            setting: setting.to_string(),
            method: method.to_string(),
            seconds,
        });
    }

    fn append(&mut self, other: Report) {
        self.results.extend(other.results);
        self.traces.extend(other.traces);
        self.timings.extend(other.timings);
    }

    /// Values of one `(setting, method, metric)` cell in seed order.
    pub fn values(&self, setting: &str, method: &str, metric: &str) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.setting == setting && r.method == method && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}

/// Runs every seed of the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Report> {
    let job = |seed: u64| -> CliResult<Report> {
        match cfg.experiment() {
            Experiment::Queue => queue::run_seed(cfg, seed),
            Experiment::Sde => sde::run_seed(cfg, seed),
            Experiment::Mcmc => mcmc::run_seed(cfg, seed),
            Experiment::Ope => ope::run_seed(cfg, seed),
            Experiment::Selftest => Err(CliError::Config("selftest has no seed jobs".into())),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    let reports: Vec<CliResult<Report>> = pool.install(|| cfg.seeds.par_iter().map(|&s| job(s)).collect());
    let mut merged = Report::default();
    for r in reports {
        merged.append(r?);
    }
    Ok(merged)
}

pub(crate) fn rng_for(seed: u64, tag: u64, sub: u64) -> SeededRng {
    seeded_rng(derive_seed(derive_seed(seed, tag), sub))
}

/// The configured VPM settings with the run's own seed.
pub(crate) fn vpm_config(cfg: &ExperimentConfig, seed: u64, sub: u64) -> VpmConfig {
    let mut v = cfg.vpm.clone();
    v.seed = derive_seed(derive_seed(seed, stream::VPM), sub);
    v
}

/// Builds the configured ratio model; tabular models need `shape`.
pub fn build_model<R: Rng + ?Sized>(
    mc: &ModelConfig,
    input_dim: usize,
    shape: Option<Vec<usize>>,
    rng: &mut R,
) -> CliResult<RatioModel> {
    let arch = match mc.kind {
        ModelChoice::Tabular => match shape {
            Some(shape) => Architecture::Tabular { shape },
            None => {
                return Err(CliError::Config(
                    "at `model.kind`: tabular models need a discrete state space".into(),
                ))
            }
        },
        ModelChoice::Fourier => Architecture::fourier(input_dim, mc.features, mc.bandwidth, rng),
        ModelChoice::Mlp => Architecture::mlp(input_dim, &mc.hidden, mc.activation),
    };
    Ok(RatioModel::new(arch, rng)?)
}
