//! Run artifacts: manifest, per-trial JSON lines, summary, and plot CSVs.
//!
//! Everything except the manifest's wall-clock stamp is a pure function of
//! the resolved config, so reruns with the same seed produce byte-identical
//! result files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use riskcal_core::harness::{trial_data_seed, Method, MethodSummary, TrialRecord};

use crate::config::{io_error, CliError, RunSettings};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VIOLATION_CSV: &str = "violation_rate.csv";
pub const FINAL_BETA_CSV: &str = "final_beta.csv";
pub const CURVE_CSV: &str = "beta_vs_labels.csv";

/// 95% normal quantile for the pointwise confidence bands.
const Z95: f64 = 1.959963984540054;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Wall-clock stamp; the only non-reproducible artifact field.
    pub created_unix_ms: u64,
    pub command: String,
    pub config: serde_json::Value,
    pub theta: f64,
    pub alpha: f64,
    pub budget: f64,
    /// Best safe threshold under the run's risk oracle, when known.
    pub beta_star: Option<f64>,
    pub rho_oracle: String,
    pub seed_roster: Vec<u64>,
    pub artifacts: Vec<String>,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    settings: &RunSettings,
    data_desc: &serde_json::Value,
    rho_oracle: &str,
    beta_star: Option<f64>,
) -> Result<RunManifest, CliError> {
    let manifest = RunManifest {
        tool: "riskcal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
        command: command.into(),
        config: json!({
            "trial": settings.trial,
            "methods": settings.methods,
            "trials": settings.trials,
            "jobs": settings.jobs,
            "data": data_desc,
        }),
        theta: settings.trial.theta,
        alpha: settings.trial.alpha,
        budget: settings.trial.budget,
        beta_star,
        rho_oracle: rho_oracle.into(),
        seed_roster: (0..settings.trials)
            .map(|t| trial_data_seed(settings.trial.seed, t))
            .collect(),
        artifacts: vec![
            TRIALS_FILE.into(),
            SUMMARY_FILE.into(),
            VIOLATION_CSV.into(),
            FINAL_BETA_CSV.into(),
            CURVE_CSV.into(),
        ],
    };
    let path = dir.join(MANIFEST_FILE);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &manifest)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| io_error(&path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes trials.jsonl: optional per-step lines, then one summary line per
/// trial. The step trace is pulled out of the record so the trial line stays
/// compact.
pub fn write_trials(dir: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let path = dir.join(TRIALS_FILE);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut out = BufWriter::new(file);
    let emit = |e: serde_json::Error| CliError::Data(format!("{}: {e}", path.display()));
    for record in records {
        if let Some(steps) = &record.trace {
            for s in steps {
                let mut line = serde_json::to_value(s).map_err(emit)?;
                let obj = line.as_object_mut().unwrap();
                obj.insert("type".into(), json!("step"));
                obj.insert("method".into(), json!(record.method));
                obj.insert("trial".into(), json!(record.trial));
                writeln!(out, "{line}").map_err(|e| io_error(&path, e))?;
            }
        }
        let slim = TrialRecord {
            trace: None,
            ..record.clone()
        };
        let mut line = serde_json::to_value(&slim).map_err(emit)?;
        line.as_object_mut().unwrap().insert("type".into(), json!("trial"));
        writeln!(out, "{line}").map_err(|e| io_error(&path, e))?;
    }
    out.flush().map_err(|e| io_error(&path, e))
}

pub fn read_trials(dir: &Path) -> Result<Vec<TrialRecord>, CliError> {
    let path = dir.join(TRIALS_FILE);
    let file = File::open(&path).map_err(|e| io_error(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if value.get("type").and_then(|t| t.as_str()) == Some("trial") {
            let record: TrialRecord = serde_json::from_value(value)
                .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no trial records found",
            path.display()
        )));
    }
    Ok(records)
}

pub fn write_summary(
    dir: &Path,
    manifest: &RunManifest,
    summaries: &[MethodSummary],
) -> Result<(), CliError> {
    let path = dir.join(SUMMARY_FILE);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let value = json!({
        "theta": manifest.theta,
        "alpha": manifest.alpha,
        "budget": manifest.budget,
        "beta_star": manifest.beta_star,
        "rho_oracle": manifest.rho_oracle,
        "methods": summaries,
    });
    serde_json::to_writer_pretty(BufWriter::new(file), &value)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn method_order(records: &[TrialRecord]) -> Vec<Method> {
    let mut order = Vec::new();
    for r in records {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    order
}

/// violation_rate.csv: one row per method.
pub fn write_violation_csv(dir: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let path = dir.join(VIOLATION_CSV);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "method,trials,violations,violation_rate").map_err(|e| io_error(&path, e))?;
    for method in method_order(records) {
        let group: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method).collect();
        let known: Vec<bool> = group.iter().filter_map(|r| r.violation).collect();
        let violations = known.iter().filter(|&&v| v).count();
        let rate = if known.is_empty() {
            f64::NAN
        } else {
            violations as f64 / known.len() as f64
        };
        writeln!(out, "{method},{},{violations},{rate}", group.len())
            .map_err(|e| io_error(&path, e))?;
    }
    out.flush().map_err(|e| io_error(&path, e))
}

/// final_beta.csv: mean final estimate per method with a 95% CI on the mean.
pub fn write_final_beta_csv(dir: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let path = dir.join(FINAL_BETA_CSV);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "method,trials,mean_final_beta,ci_lower,ci_upper")
        .map_err(|e| io_error(&path, e))?;
    for method in method_order(records) {
        let finals: Vec<f64> = records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.final_beta)
            .collect();
        let (mean, half) = mean_ci(&finals);
        writeln!(
            out,
            "{method},{},{mean},{},{}",
            finals.len(),
            mean - half,
            mean + half
        )
        .map_err(|e| io_error(&path, e))?;
    }
    out.flush().map_err(|e| io_error(&path, e))
}

/// beta_vs_labels.csv: the estimate trajectory against labels queried, one
/// row per (method, checkpoint) with pointwise 95% confidence bands.
pub fn write_curve_csv(dir: &Path, records: &[TrialRecord]) -> Result<(), CliError> {
    let path = dir.join(CURVE_CSV);
    let file = File::create(&path).map_err(|e| io_error(&path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "method,labels,trials,mean_beta_hat,ci_lower,ci_upper")
        .map_err(|e| io_error(&path, e))?;
    for method in method_order(records) {
        let mut by_labels: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in records.iter().filter(|r| r.method == method) {
            for c in &r.checkpoints {
                by_labels.entry(c.labels).or_default().push(c.beta_hat);
            }
        }
        for (labels, betas) in by_labels {
            let (mean, half) = mean_ci(&betas);
            writeln!(
                out,
                "{method},{labels},{},{mean},{},{}",
                betas.len(),
                mean - half,
                mean + half
            )
            .map_err(|e| io_error(&path, e))?;
        }
    }
    out.flush().map_err(|e| io_error(&path, e))
}

fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z95 * (var / n).sqrt())
}

/// Human summary table printed after runs and by `report`.
pub fn render_table(manifest: &RunManifest, summaries: &[MethodSummary]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "theta={} alpha={} budget={} rho_oracle={}",
        manifest.theta, manifest.alpha, manifest.budget, manifest.rho_oracle
    ));
    if let Some(b) = manifest.beta_star {
        s.push_str(&format!(" beta*={b:.4}"));
    }
    s.push('\n');
    s.push_str(&format!(
        "{:<10} {:>6} {:>9} {:>11} {:>8} {:>8} {:>10} {:>12}\n",
        "method", "trials", "violation", "final beta", "labels", "steps", "query frac", "labels->tgt"
    ));
    for m in summaries {
        let viol = m
            .violation_rate
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "-".into());
        let ltt = m
            .mean_labels_to_target
            .map(|v| format!("{v:.0}"))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<10} {:>6} {:>9} {:>11.4} {:>8.0} {:>8.0} {:>10.3} {:>12}\n",
            m.method.to_string(),
            m.trials,
            viol,
            m.mean_final_beta,
            m.mean_labels,
            m.mean_steps,
            m.mean_query_fraction,
            ltt
        ));
    }
    s
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}
