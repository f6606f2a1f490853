//! Command implementations.

use std::path::Path;
use std::sync::Arc;

use serde_json::json;

use riskcal_core::grid::BetaGrid;
use riskcal_core::harness::data::{
    beta_star_from_curve, curve_oracle, empirical_risk_curve, synthetic_multiclass, ScoreDataset,
};
use riskcal_core::harness::{
    beta_star_simulation, oracle_rho_simulation, run_experiment, summarize_method, ExperimentData,
    ExperimentOutcome, Method, TrialRecord,
};
use riskcal_core::risk::{FprRisk, MiscoverageRisk, RiskFunction};

use crate::artifacts;
use crate::config::{self, CliError, RunSettings};
use crate::CommonFlags;

/// Largest holdout reserved from a score file when none is requested.
const DEFAULT_MAX_HOLDOUT: usize = 100_000;

fn init_thread_pool(jobs: usize) {
    if jobs > 0 {
        // ignore the error when a pool already exists (tests, repeat calls)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

pub fn cmd_simulate(flags: &CommonFlags) -> Result<(), CliError> {
    let settings = config::resolve(flags)?;
    init_thread_pool(settings.jobs);
    artifacts::ensure_dir(&settings.out_dir)?;
    let beta_star = beta_star_simulation(settings.trial.theta);
    let manifest = artifacts::write_manifest(
        &settings.out_dir,
        "simulate",
        &settings,
        &json!({"source": "simulation"}),
        "closed_form",
        Some(beta_star),
    )?;
    let outcome = run_experiment(
        &settings.trial,
        &settings.methods,
        settings.trials,
        &ExperimentData::Simulation,
        Arc::new(FprRisk),
        Some(&oracle_rho_simulation),
    )?;
    finish_run(&settings, &manifest, &outcome)
}

pub fn cmd_calibrate(
    scores: &Path,
    format: Option<&str>,
    holdout: Option<usize>,
    flags: &CommonFlags,
) -> Result<(), CliError> {
    let settings = config::resolve(flags)?;
    init_thread_pool(settings.jobs);
    let dataset = load_scores(scores, format)?;
    let rows = dataset.len();
    let holdout_rows = holdout
        .unwrap_or_else(|| DEFAULT_MAX_HOLDOUT.min(rows / 3))
        .min(rows.saturating_sub(1));
    if holdout_rows == 0 {
        return Err(CliError::Usage(format!(
            "dataset of {rows} rows leaves no holdout; provide more data"
        )));
    }
    let (train, held_out) = dataset.split_holdout(holdout_rows);
    let risk: Arc<dyn RiskFunction> = if train.classes() == 2 {
        Arc::new(FprRisk)
    } else {
        Arc::new(MiscoverageRisk)
    };
    let grid = BetaGrid::uniform(settings.trial.grid_size)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rho_curve = empirical_risk_curve(held_out.points(), risk.as_ref(), &grid);
    let beta_star = beta_star_from_curve(&grid, &rho_curve, settings.trial.theta);
    let rho = curve_oracle(grid, rho_curve);

    artifacts::ensure_dir(&settings.out_dir)?;
    let manifest = artifacts::write_manifest(
        &settings.out_dir,
        "calibrate",
        &settings,
        &json!({
            "source": "scores",
            "path": scores.display().to_string(),
            "rows": rows,
            "classes": train.classes(),
            "holdout_rows": holdout_rows,
        }),
        "holdout_empirical",
        Some(beta_star),
    )?;
    let outcome = run_experiment(
        &settings.trial,
        &settings.methods,
        settings.trials,
        &ExperimentData::Dataset(Arc::new(train)),
        risk,
        Some(&rho),
    )?;
    finish_run(&settings, &manifest, &outcome)
}

fn finish_run(
    settings: &RunSettings,
    manifest: &artifacts::RunManifest,
    outcome: &ExperimentOutcome,
) -> Result<(), CliError> {
    let dir = &settings.out_dir;
    artifacts::write_trials(dir, &outcome.records)?;
    artifacts::write_summary(dir, manifest, &outcome.summaries)?;
    artifacts::write_violation_csv(dir, &outcome.records)?;
    artifacts::write_final_beta_csv(dir, &outcome.records)?;
    artifacts::write_curve_csv(dir, &outcome.records)?;
    print!("{}", artifacts::render_table(manifest, &outcome.summaries));
    println!("artifacts written to {}", dir.display());
    Ok(())
}

pub fn cmd_report(dir: &Path) -> Result<(), CliError> {
    let manifest = artifacts::read_manifest(dir)?;
    let records = artifacts::read_trials(dir)?;
    let mut order: Vec<Method> = Vec::new();
    for r in &records {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let summaries: Vec<_> = order
        .iter()
        .map(|&m| {
            let group: Vec<TrialRecord> = records
                .iter()
                .filter(|r| r.method == m)
                .cloned()
                .collect();
            summarize_method(&group)
        })
        .collect();
    artifacts::write_summary(dir, &manifest, &summaries)?;
    artifacts::write_violation_csv(dir, &records)?;
    artifacts::write_final_beta_csv(dir, &records)?;
    artifacts::write_curve_csv(dir, &records)?;
    print!("{}", artifacts::render_table(&manifest, &summaries));
    Ok(())
}

pub fn cmd_synth(
    classes: usize,
    rows: usize,
    concentration: f64,
    seed: u64,
    format: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let dataset = synthetic_multiclass(classes, rows, concentration, seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| config::io_error(parent, e))?;
        }
    }
    match resolve_format(out, format)? {
        ScoreFormat::Csv => dataset.write_csv(out)?,
        ScoreFormat::Binary => dataset.write_binary(out)?,
    }
    println!(
        "wrote {rows} rows x {classes} classes (concentration {concentration}, seed {seed}) to {}",
        out.display()
    );
    Ok(())
}

enum ScoreFormat {
    Csv,
    Binary,
}

fn resolve_format(path: &Path, format: Option<&str>) -> Result<ScoreFormat, CliError> {
    match format {
        Some("csv") => Ok(ScoreFormat::Csv),
        Some("binary") => Ok(ScoreFormat::Binary),
        Some(other) => Err(CliError::Usage(format!(
            "unknown format `{other}` (expected csv|binary)"
        ))),
        None => match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ScoreFormat::Csv),
            _ => Ok(ScoreFormat::Binary),
        },
    }
}

fn load_scores(path: &Path, format: Option<&str>) -> Result<ScoreDataset, CliError> {
    Ok(match resolve_format(path, format)? {
        ScoreFormat::Csv => ScoreDataset::load_csv(path)?,
        ScoreFormat::Binary => ScoreDataset::load_binary(path)?,
    })
}
