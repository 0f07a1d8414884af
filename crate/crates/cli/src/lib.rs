//! Experiment harness for the variational power method: configuration,
//! seed-parallel runners, model-based baselines, result files and the
//! command-line front end.

pub mod baseline;
pub mod config;
mod error;
pub mod experiments;
pub mod output;
pub mod selftest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Experiment, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use experiments::{run_experiment, Report};

#[derive(Debug, Parser)]
#[command(name = "vpm", version, about = "Stationary-distribution estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML file merged over the experiment's preset.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seeds, e.g. `0,3,7` or `0..10` (end exclusive).
    #[arg(long, global = true, value_name = "LIST", value_parser = parse_seeds)]
    pub seed: Option<Seeds>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Override one config key, e.g. `--set vpm.lambda=0.5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Bounded-probe queue, stationary law vs a count model.
    Queue,
    /// Ornstein-Uhlenbeck particles, reweighted window vs Euler-Maruyama.
    Sde,
    /// One-step HMC data on 2-D potentials.
    Mcmc,
    /// Off-policy evaluation on the gridworld.
    Ope,
    /// Run the oracle checks.
    Selftest,
}

impl Command {
    pub fn experiment(self) -> Experiment {
        match self {
            Command::Queue => Experiment::Queue,
            Command::Sde => Experiment::Sde,
            Command::Mcmc => Experiment::Mcmc,
            Command::Ope => Experiment::Ope,
            Command::Selftest => Experiment::Selftest,
        }
    }
}

/// Parsed `--seed` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

pub fn parse_seeds(text: &str) -> Result<Seeds, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        let number = |s: &str| s.trim().parse::<u64>().map_err(|e| format!("bad seed `{s}`: {e}"));
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (number(a)?, number(b)?);
                if a >= b {
                    return Err(format!("empty seed range `{part}`"));
                }
                seeds.extend(a..b);
            }
            None => seeds.push(number(part)?),
        }
    }
    Ok(Seeds(seeds))
}

impl Cli {
    /// The resolved configuration: preset, `--config`, `--set`, then the
    /// dedicated flags.
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(Seeds(seeds)) = &self.seed {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            overrides.push(format!("seeds=[{}]", list.join(",")));
        }
        if let Some(out) = &self.out {
            let quoted = toml::Value::String(out.display().to_string()).to_string();
            overrides.push(format!("out={quoted}"));
        }
        if let Some(threads) = self.threads {
            overrides.push(format!("threads={threads}"));
        }
        ExperimentConfig::resolve(self.command.experiment(), self.config.as_deref(), &overrides)
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = cli.resolve()?;
    let io = |e| CliError::io("stdout", e);
    if cfg.experiment() == Experiment::Selftest {
        let checks = selftest::run(cfg.seeds[0]);
        for check in &checks {
            writeln!(stdout, "{}", check.line()).map_err(io)?;
        }
        let failed = checks.iter().filter(|c| !c.passed).count();
        return if failed == 0 { Ok(()) } else { Err(CliError::SelfTest(failed)) };
    }
    let report = run_experiment(&cfg)?;
    output::write_all(&cfg.out, &cfg, &report)?;
    write!(stdout, "{}", output::summary_dat(&report)).map_err(io)?;
    writeln!(stdout, "# wrote {}", cfg.out.display()).map_err(io)?;
    Ok(())
}

/// Parses `args` (program name first), runs, and returns the exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for failures while
/// running.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let target: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let _ = writeln!(stderr, "  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("3").unwrap().0, vec![3]);
        assert_eq!(parse_seeds("0..3,7").unwrap().0, vec![0, 1, 2, 7]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn flags_override_the_preset() {
        let cli = Cli::try_parse_from(["vpm", "queue", "--seed", "4,5", "--out", "some dir", "--threads", "2"]).unwrap();
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.out, PathBuf::from("some dir"));
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.experiment(), Experiment::Queue);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(main_with_args(["vpm", "bogus"], &mut out, &mut err), 1);
        assert!(!err.is_empty());
        assert_eq!(main_with_args(["vpm", "--help"], &mut out, &mut err), 0);
    }
}
