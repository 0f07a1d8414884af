//! Result files. Everything except `timing.csv` is a pure function of the
//! resolved configuration, so reruns produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use vpm::metrics::log_mse;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::Report;

pub const RESULTS: &str = "results.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const TIMING: &str = "timing.csv";
pub const SUMMARY: &str = "summary.dat";
pub const MANIFEST: &str = "manifest.toml";

fn write(path: PathBuf, contents: String) -> CliResult<()> {
    fs::write(&path, contents).map_err(|e| CliError::io(path, e))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Long form `seed,setting,method,metric,value`.
pub fn results_csv(report: &Report) -> String {
    csv_text(
        &["seed", "setting", "method", "metric", "value"],
        report.results.iter().map(|r| {
            vec![
                r.seed.to_string(),
                r.setting.clone(),
                r.method.clone(),
                r.metric.clone(),
                format!("{:?}", r.value),
            ]
        }),
    )
}

/// Per-outer-step traces of every run; metric columns are the union over
/// runs, empty where a run has no such metric.
pub fn diagnostics_csv(report: &Report) -> String {
    let mut names: Vec<String> = Vec::new();
    for trace in &report.traces {
        for name in trace.diagnostics.metric_names() {
            if !names.contains(&name) {
                names.push(name);
            }
        }
    }
    let mut header = vec!["seed", "setting", "outer_step", "J", "E_p_tau", "v", "alpha"];
    header.extend(names.iter().map(String::as_str));
    let rows = report.traces.iter().flat_map(|trace| {
        let names = &names;
        trace.diagnostics.rows.iter().map(move |row| {
            let mut rec = vec![
                trace.seed.to_string(),
                trace.setting.clone(),
                row.outer_step.to_string(),
                format!("{:?}", row.objective),
                format!("{:?}", row.mean_tau),
                format!("{:?}", row.v),
                format!("{:?}", row.alpha),
            ];
            rec.extend(names.iter().map(|name| {
                row.metrics
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| format!("{v:?}"))
                    .unwrap_or_default()
            }));
            rec
        })
    });
    csv_text(&header, rows)
}

pub fn timing_csv(report: &Report) -> String {
    csv_text(
        &["seed", "setting", "method", "seconds"],
        report.timings.iter().map(|t| {
            vec![
                t.seed.to_string(),
                t.setting.clone(),
                t.method.clone(),
                format!("{:.6}", t.seconds),
            ]
        }),
    )
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Whitespace-separated table for gnuplot: one line per
/// `(setting, method, metric)` cell with mean, sample standard deviation
/// and seed count over seeds. Cells that carry both `estimate` and `truth`
/// get an extra `log_mse` line.
pub fn summary_dat(report: &Report) -> String {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut cells: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in &report.results {
        let key = (r.setting.clone(), r.method.clone(), r.metric.clone());
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().push(r.value);
    }
    let mut out = String::from("# setting method metric mean std count\n");
    let mut line = |setting: &str, method: &str, metric: &str, values: &[f64]| {
        let (mean, std) = mean_std(values);
        out.push_str(&format!("{setting} {method} {metric} {mean:?} {std:?} {}\n", values.len()));
    };
    for key in &order {
        let values = &cells[key];
        line(&key.0, &key.1, &key.2, values);
        if key.2 == "estimate" {
            let truth_key = (key.0.clone(), key.1.clone(), "truth".to_string());
            if let Some(truth) = cells.get(&truth_key).and_then(|t| t.first()) {
                if let Ok(lm) = log_mse(values, *truth) {
                    line(&key.0, &key.1, "log_mse", &[lm]);
                }
            }
        }
    }
    out
}

pub fn manifest_toml(cfg: &ExperimentConfig) -> String {
    format!(
        "# resolved configuration; rerun with `vpm {} --config {MANIFEST}`\n# vpm {}\n\
         # random streams per seed s and setting index k: derive_seed(derive_seed(s, tag), k) with\n\
         # tags data=1 model=2 vpm=3 truth=4 eval=5 baseline=6; `vpm.seed` is replaced by the vpm stream\n\n{}",
        cfg.experiment(),
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()
    )
}

/// Writes every result file into `dir`, creating it if needed.
pub fn write_all(dir: &Path, cfg: &ExperimentConfig, report: &Report) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write(dir.join(MANIFEST), manifest_toml(cfg))?;
    write(dir.join(RESULTS), results_csv(report))?;
    write(dir.join(DIAGNOSTICS), diagnostics_csv(report))?;
    write(dir.join(TIMING), timing_csv(report))?;
    write(dir.join(SUMMARY), summary_dat(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vpm::vpm::{Diagnostics, DiagnosticsRow};

    use crate::experiments::RunTrace;

    fn report() -> Report {
        let mut r = Report::default();
        for seed in 0..3 {
            r.push(seed, "gamma=0.5", "vpm", "estimate", 1.0 + seed as f64);
            r.push(seed, "gamma=0.5", "vpm", "truth", 2.0);
        }
        r.traces.push(RunTrace {
            seed: 0,
            setting: "a".into(),
            diagnostics: Diagnostics {
                rows: vec![DiagnosticsRow {
                    outer_step: 0,
                    objective: -0.5,
                    mean_tau: 1.0,
                    v: 0.0,
                    alpha: 1.0,
                    metrics: vec![("kl".into(), 0.25)],
                }],
            },
        });
        r.traces.push(RunTrace {
            seed: 1,
            setting: "b".into(),
            diagnostics: Diagnostics {
                rows: vec![DiagnosticsRow {
                    outer_step: 0,
                    objective: -0.5,
                    mean_tau: 1.0,
                    v: 0.1,
                    alpha: 1.0,
                    metrics: vec![("mmd".into(), 0.5)],
                }],
            },
        });
        r.time(0, "a", "vpm", 0.1);
        r
    }

    #[test]
    fn results_are_long_form_with_exact_floats() {
        let text = results_csv(&report());
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("seed,setting,method,metric,value"));
        assert_eq!(lines.next(), Some("0,gamma=0.5,vpm,estimate,1.0"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn diagnostics_take_the_union_of_metrics() {
        let text = diagnostics_csv(&report());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "seed,setting,outer_step,J,E_p_tau,v,alpha,kl,mmd");
        assert_eq!(lines[1], "0,a,0,-0.5,1.0,0.0,1.0,0.25,");
        assert_eq!(lines[2], "1,b,0,-0.5,1.0,0.1,1.0,,0.5");
    }

    #[test]
    fn summary_has_mean_std_and_log_mse() {
        let text = summary_dat(&report());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "gamma=0.5 vpm estimate 2.0 1.0 3");
        // errors -1, 0, 1 around truth 2
        let lm: f64 = lines[2].split_whitespace().nth(3).unwrap().parse().unwrap();
        assert!(lines[2].starts_with("gamma=0.5 vpm log_mse"));
        assert!((lm - (2.0f64 / 3.0).ln()).abs() < 1e-15);
        assert_eq!(lines[3], "gamma=0.5 vpm truth 2.0 0.0 3");
    }
}
