//! `riskcal` — run streaming risk-threshold calibration experiments.
//!
//! Subcommands: `simulate` (synthetic binary stream with a closed-form risk
//! oracle), `calibrate` (replay a score file with a held-out risk estimate),
//! `report` (re-derive tables and plot CSVs from run artifacts), and `synth`
//! (generate a synthetic multiclass score file).
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 invariant abort.

mod artifacts;
mod config;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};

use config::CliError;

#[derive(Parser)]
#[command(name = "riskcal", version, about = "Anytime-safe risk threshold calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct CommonFlags {
    /// Config file (TOML, flat keys); command-line flags override it.
    #[arg(long)]
    config: Option<std::path::PathBuf>,
    /// Trials per method.
    #[arg(long)]
    trials: Option<u64>,
    /// Stop each trial after this many queried labels.
    #[arg(long)]
    max_labels: Option<u64>,
    /// Stop each trial after this many stream steps (exclusive with --max-labels).
    #[arg(long)]
    max_steps: Option<u64>,
    /// Comma-separated methods: all,oblivious,pretrain,learned.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Risk bound θ.
    #[arg(long)]
    theta: Option<f64>,
    /// Error budget α.
    #[arg(long)]
    alpha: Option<f64>,
    /// Expected labeling budget B.
    #[arg(long)]
    budget: Option<f64>,
    /// Threshold grid resolution.
    #[arg(long)]
    grid_size: Option<usize>,
    /// Base seed; every stream seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $RISKCAL_OUT_DIR or ./riskcal-out).
    #[arg(long)]
    out_dir: Option<std::path::PathBuf>,
    /// Write one JSON line per step in addition to per-trial summaries.
    #[arg(long, action = ArgAction::SetTrue)]
    trace: bool,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Query-probability floor for adaptive policies.
    #[arg(long)]
    q_floor: Option<f64>,
    /// Bettor kind: ons or cocob.
    #[arg(long)]
    bettor: Option<String>,
    /// Dual update for the budget game: ascent or windowed.
    #[arg(long)]
    dual: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation trials against the closed-form risk oracle.
    Simulate {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Replay a score file; violations judged against a held-out estimate.
    Calibrate {
        /// Score file (CSV `id,label,p0,…` or the compact binary format).
        #[arg(long)]
        scores: std::path::PathBuf,
        /// Input format (default: by extension, `.csv` or binary otherwise).
        #[arg(long)]
        format: Option<String>,
        /// Rows reserved from the tail for risk estimation
        /// (default: min(100000, rows/3)).
        #[arg(long)]
        holdout: Option<usize>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Rebuild summary table and plot CSVs from an artifact directory.
    Report {
        /// Directory containing run_manifest.json and trials.jsonl.
        dir: std::path::PathBuf,
    },
    /// Generate a synthetic multiclass score file.
    Synth {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        /// Dirichlet concentration of the score vectors.
        #[arg(long, default_value_t = 0.5)]
        concentration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output format: csv or binary (default: by extension).
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        out: std::path::PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successes, everything else is a usage error
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Simulate { common } => run::cmd_simulate(&common),
        Command::Calibrate {
            scores,
            format,
            holdout,
            common,
        } => run::cmd_calibrate(&scores, format.as_deref(), holdout, &common),
        Command::Report { dir } => run::cmd_report(&dir),
        Command::Synth {
            classes,
            rows,
            concentration,
            seed,
            format,
            out,
        } => run::cmd_synth(classes, rows, concentration, seed, format.as_deref(), &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}
