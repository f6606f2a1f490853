//! Config resolution: defaults, then the TOML file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use riskcal_core::harness::data::DataError;
use riskcal_core::harness::{Method, StopRule, TrialConfig, TrialError};

use crate::CommonFlags;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RISKCAL_OUT_DIR";
const OUT_DIR_FALLBACK: &str = "riskcal-out";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Invariant(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Invariant(m) => f.write_str(m),
        }
    }
}

impl From<TrialError> for CliError {
    fn from(e: TrialError) -> Self {
        match e {
            TrialError::Config(m) => CliError::Usage(m),
            TrialError::Data(d) => CliError::Data(d.to_string()),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// The config file mirrors the trial fields with everything optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    trials: Option<u64>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
    trace: Option<bool>,
    methods: Option<Vec<String>>,
    theta: Option<f64>,
    alpha: Option<f64>,
    budget: Option<f64>,
    grid_size: Option<usize>,
    max_labels: Option<u64>,
    max_steps: Option<u64>,
    q_floor: Option<f64>,
    dual: Option<String>,
    dual_window: Option<usize>,
    bins: Option<usize>,
    bettor: Option<String>,
    predictor_grid: Option<usize>,
    efficiency_target: Option<f64>,
}

/// Fully resolved settings for a run.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub trial: TrialConfig,
    pub methods: Vec<Method>,
    pub trials: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

pub fn resolve(flags: &CommonFlags) -> Result<RunSettings, CliError> {
    let file: FileConfig = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let mut trial = TrialConfig::default();
    trial.theta = flags.theta.or(file.theta).unwrap_or(trial.theta);
    trial.alpha = flags.alpha.or(file.alpha).unwrap_or(trial.alpha);
    trial.budget = flags.budget.or(file.budget).unwrap_or(trial.budget);
    trial.grid_size = flags.grid_size.or(file.grid_size).unwrap_or(trial.grid_size);
    trial.seed = flags.seed.or(file.seed).unwrap_or(trial.seed);
    trial.q_floor = flags.q_floor.or(file.q_floor).unwrap_or(trial.q_floor);
    trial.dual_window = file.dual_window.unwrap_or(trial.dual_window);
    trial.bins = file.bins.unwrap_or(trial.bins);
    trial.predictor_grid = file.predictor_grid.or(trial.predictor_grid);
    trial.efficiency_target = file.efficiency_target.or(trial.efficiency_target);
    trial.trace = flags.trace || file.trace.unwrap_or(false);

    if let Some(kind) = flags.bettor.as_deref().or(file.bettor.as_deref()) {
        trial.bettor = kind.parse().map_err(CliError::Usage)?;
    }
    if let Some(kind) = flags.dual.as_deref().or(file.dual.as_deref()) {
        trial.dual = kind.parse().map_err(CliError::Usage)?;
    }

    let max_labels = flags.max_labels.or(file.max_labels);
    let max_steps = flags.max_steps.or(file.max_steps);
    trial.stop = match (max_labels, max_steps) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "set either max_labels or max_steps, not both".into(),
            ))
        }
        (Some(l), None) => StopRule::MaxLabels(l),
        (None, Some(s)) => StopRule::MaxSteps(s),
        (None, None) => trial.stop,
    };

    let method_names = flags
        .methods
        .clone()
        .or(file.methods)
        .unwrap_or_else(|| vec!["all".into(), "oblivious".into(), "pretrain".into(), "learned".into()]);
    let mut methods = Vec::new();
    for name in &method_names {
        let m: Method = name.parse().map_err(CliError::Usage)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::Usage("no methods selected".into()));
    }

    let out_dir = flags
        .out_dir
        .clone()
        .or(file.out_dir)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(OUT_DIR_FALLBACK));

    let settings = RunSettings {
        trial,
        methods,
        trials: flags.trials.or(file.trials).unwrap_or(100),
        out_dir,
        jobs: flags.jobs.or(file.jobs).unwrap_or(0),
    };
    settings.trial.validate()?;
    if settings.trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }
    Ok(settings)
}
