//! Experiment configuration: a shipped TOML preset per experiment, an
//! optional user file merged over it, then `key.path=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpm::environments::{GridworldSpec, PotentialKind};
use vpm::models::Activation;
use vpm::vpm::{InnerSolver, VpmConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Queue,
    Sde,
    Mcmc,
    Ope,
    Selftest,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Queue => "queue",
            Experiment::Sde => "sde",
            Experiment::Mcmc => "mcmc",
            Experiment::Ope => "ope",
            Experiment::Selftest => "selftest",
        }
    }

    /// The shipped preset for this experiment.
    pub fn preset(self) -> &'static str {
        match self {
            Experiment::Queue => include_str!("../presets/queue.toml"),
            Experiment::Sde => include_str!("../presets/sde.toml"),
            Experiment::Mcmc => include_str!("../presets/mcmc.toml"),
            Experiment::Ope => include_str!("../presets/ope.toml"),
            Experiment::Selftest => include_str!("../presets/selftest.toml"),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Tabular,
    Fourier,
    Mlp,
}

/// Ratio model used by an experiment. Tabular models take their shape from
/// the experiment's state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelChoice,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub features: usize,
    pub bandwidth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelChoice::Mlp,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            features: 64,
            bandwidth: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueConfig {
    pub q_a: f64,
    pub q_f: f64,
    /// Probe range `{0, .., bound - 1}`; `ceil(40 rho)` when absent.
    pub bound: Option<usize>,
    /// Dataset sizes, one setting each.
    pub sizes: Vec<usize>,
    /// Simulation length of the model-based baseline.
    pub baseline_steps: usize,
    /// Report `KL(estimate || truth)` instead of `KL(truth || estimate)`.
    pub reverse_kl: bool,
}

impl Default for QueueConfig {
    fn default() -> Self {
        QueueConfig {
            q_a: 0.8,
            q_f: 0.9,
            bound: None,
            sizes: vec![100],
            baseline_steps: 200,
            reverse_kl: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub mu: f64,
    pub sigma: f64,
    pub theta: f64,
    pub dt: f64,
    pub particles: usize,
    pub steps: usize,
    /// Evenly spaced evaluation times along the path.
    pub checkpoints: usize,
    /// Share of the elapsed path used as training data at each checkpoint.
    pub window_fraction: f64,
    /// At most this many window steps enter the weighted MMD, evenly thinned
    /// and always including the most recent one.
    pub eval_steps: usize,
    /// Size of the exact stationary sample.
    pub true_sample: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            mu: 2.0,
            sigma: 2.0,
            theta: 2.0,
            dt: 1e-3,
            particles: 1000,
            steps: 2000,
            checkpoints: 10,
            window_fraction: 0.01,
            eval_steps: 4,
            true_sample: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcBaselineConfig {
    pub enabled: bool,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub iterations: usize,
    pub batch: usize,
    /// Fixed standard deviation of the Gaussian transition model.
    pub spread: f64,
    /// Applications of the fitted transition.
    pub steps: usize,
}

impl Default for McmcBaselineConfig {
    fn default() -> Self {
        McmcBaselineConfig {
            enabled: true,
            hidden: vec![128; 4],
            lr: 5e-4,
            iterations: 1500,
            batch: 1000,
            spread: 0.1,
            steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub potentials: Vec<PotentialKind>,
    /// Number of `(x, x')` pairs.
    pub n: usize,
    pub true_particles: usize,
    pub true_steps: usize,
    /// Size of every evaluated sample.
    pub eval_size: usize,
    pub baseline: McmcBaselineConfig,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            potentials: vec![PotentialKind::TwoGauss],
            n: 50_000,
            true_particles: 2000,
            true_steps: 2000,
            eval_size: 2000,
            baseline: McmcBaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeConfig {
    pub grid: GridworldSpec,
    pub trajectories: usize,
    pub horizon: usize,
    /// Discounts to evaluate besides the average-reward setting.
    pub gammas: Vec<f64>,
    pub average: bool,
    /// Size of the `(s0, a0)` pool for the initial term.
    pub init_pool: usize,
}

impl Default for OpeConfig {
    fn default() -> Self {
        OpeConfig {
            grid: GridworldSpec::default(),
            trajectories: 1000,
            horizon: 100,
            gammas: vec![0.99],
            average: true,
            init_pool: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Worker threads for seed-parallel runs; 0 uses every core.
    pub threads: usize,
    pub vpm: VpmConfig,
    pub model: ModelConfig,
    pub queue: QueueConfig,
    pub sde: SdeConfig,
    pub mcmc: McmcConfig,
    pub ope: OpeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            seeds: vec![0],
            out: PathBuf::from("results"),
            threads: 1,
            vpm: VpmConfig::default(),
            model: ModelConfig::default(),
            queue: QueueConfig::default(),
            sde: SdeConfig::default(),
            mcmc: McmcConfig::default(),
            ope: OpeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Preset for `experiment`, then `file` merged over it, then `overrides`
    /// (`key.path=value`, value in TOML syntax or a bare string).
    pub fn resolve(experiment: Experiment, file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut value = parse_toml(experiment.preset(), "preset")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let user = parse_toml(&text, &path.display().to_string())?;
            merge(&mut value, user);
        }
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        if let Some(declared) = cfg.experiment {
            if declared != experiment {
                return Err(CliError::Config(format!(
                    "config declares experiment `{declared}` but `{experiment}` was requested"
                )));
            }
        }
        let cfg = ExperimentConfig {
            experiment: Some(experiment),
            ..cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment.unwrap_or(Experiment::Selftest)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        self.vpm.validate().map_err(|e| CliError::Config(format!("at `vpm`: {e}")))?;
        if self.vpm.inner_solver == InnerSolver::Exact && self.model.kind != ModelChoice::Tabular {
            return bad("at `vpm.inner_solver`: the exact solver needs `model.kind = \"tabular\"`".into());
        }
        if self.model.hidden.iter().any(|&h| h == 0) {
            return bad("at `model.hidden`: layer sizes must be positive".into());
        }
        if self.model.kind == ModelChoice::Fourier && (self.model.features == 0 || !(self.model.bandwidth > 0.0)) {
            return bad("at `model`: Fourier features need features > 0 and bandwidth > 0".into());
        }
        match self.experiment() {
            Experiment::Queue => {
                let q = &self.queue;
                if q.sizes.is_empty() || q.sizes.contains(&0) {
                    return bad("at `queue.sizes`: need at least one positive size".into());
                }
                if q.baseline_steps == 0 {
                    return bad("at `queue.baseline_steps`: must be positive".into());
                }
                vpm::environments::QueueParams::new(q.q_a, q.q_f, q.bound.unwrap_or(2))
                    .map_err(|e| CliError::Config(format!("at `queue`: {e}")))?;
            }
            Experiment::Sde => {
                let s = &self.sde;
                vpm::environments::OuParams::new(s.mu, s.sigma, s.theta, s.dt)
                    .map_err(|e| CliError::Config(format!("at `sde`: {e}")))?;
                if s.particles == 0 || s.true_sample == 0 || s.eval_steps == 0 {
                    return bad("at `sde`: particles, true_sample and eval_steps must be positive".into());
                }
                if s.checkpoints == 0 || s.steps < s.checkpoints {
                    return bad("at `sde`: need 1 <= checkpoints <= steps".into());
                }
                if !(s.window_fraction > 0.0 && s.window_fraction <= 1.0) {
                    return bad("at `sde.window_fraction`: must lie in (0, 1]".into());
                }
            }
            Experiment::Mcmc => {
                let m = &self.mcmc;
                if m.potentials.is_empty() {
                    return bad("at `mcmc.potentials`: need at least one potential".into());
                }
                if m.n == 0 || m.true_particles == 0 || m.eval_size == 0 {
                    return bad("at `mcmc`: n, true_particles and eval_size must be positive".into());
                }
                let b = &m.baseline;
                if b.enabled && (b.iterations == 0 || b.batch == 0 || !(b.lr > 0.0) || !(b.spread >= 0.0)) {
                    return bad("at `mcmc.baseline`: invalid training settings".into());
                }
            }
            Experiment::Ope => {
                let o = &self.ope;
                if o.trajectories == 0 || o.horizon == 0 || o.init_pool == 0 {
                    return bad("at `ope`: trajectories, horizon and init_pool must be positive".into());
                }
                if let Some(g) = o.gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
                    return bad(format!("at `ope.gammas`: {g} is outside [0, 1)"));
                }
                if !o.average && o.gammas.is_empty() {
                    return bad("at `ope`: nothing to evaluate".into());
                }
            }
            Experiment::Selftest => {}
        }
        Ok(())
    }

    /// The resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn parse_toml(text: &str, origin: &str) -> CliResult<toml::Value> {
    text.parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

/// Recursively overlays `top` on `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

fn apply_override(root: &mut toml::Value, item: &str) -> CliResult<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not of the form key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override `{item}` has an empty key")));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{key}` is inside a non-table value")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("override `{path}` targets a non-table value")))?;
    let last = keys[keys.len() - 1].to_string();
    match table.get_mut(&last) {
        Some(existing) => merge(existing, value),
        None => {
            table.insert(last, value);
        }
    }
    Ok(())
}
