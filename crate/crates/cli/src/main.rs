mod commands;
mod experiment;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{CalibrationKind, EvaluateArgs};
use sciuq::eval::ScaleObjective;
use sciuq::pinn::PinnField;
use sciuq::UqError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Invalid input: bad manifest, unknown method, missing split.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "sciuq", version, about = "Uncertainty quantification experiments for neural regression and PINNs")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    U,
    Lambda,
    F,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    Rmsce,
    Mpl,
}

#[derive(Subcommand)]
enum Command {
    /// Write the datasets of a manifest (.toml) or a PINN problem (.json).
    Generate {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the manifest's method and store the posterior snapshot.
    Train {
        manifest: PathBuf,
        /// Overrides the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict a split of a trained run and write predictions and metrics.
    Evaluate {
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// PINN field to evaluate.
        #[arg(long, value_enum, default_value = "u")]
        field: Field,
        /// Run directory of the gold-standard method (fills NIP_G and KL_G).
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Calibration map to apply before scoring.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a calibration map on the calibration split and score it on another split.
    Calibrate {
        run: PathBuf,
        #[arg(long, value_enum)]
        kind: CalibrationKind,
        /// Criterion for the scale factor.
        #[arg(long, value_enum, default_value = "rmsce")]
        objective: Objective,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate metrics JSON files into one CSV.
    Compare {
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { input, out } => commands::generate(&input, out.as_deref()),
        Command::Train { manifest, out } => commands::train(&manifest, out.as_deref()).map(|_| ()),
        Command::Evaluate {
            run,
            split,
            field,
            gold,
            calibration,
            out,
        } => {
            let field = match field {
                Field::U => PinnField::U,
                Field::Lambda => PinnField::Lambda,
                Field::F => PinnField::F,
            };
            commands::evaluate(
                &run,
                &EvaluateArgs {
                    split: &split,
                    field,
                    gold: gold.as_deref(),
                    calibration: calibration.as_deref(),
                    out: out.as_deref(),
                },
            )
            .map(|_| ())
        }
        Command::Calibrate {
            run,
            kind,
            objective,
            split,
            out,
        } => {
            let objective = match objective {
                Objective::Rmsce => ScaleObjective::Rmsce,
                Objective::Mpl => ScaleObjective::Mpl,
            };
            commands::calibrate(&run, kind, objective, &split, out.as_deref()).map(|_| ())
        }
        Command::Compare { metrics, out } => commands::compare(&metrics, &out),
    }
}

/// 1 for numeric failures (divergence, factorization, non-finite values), 2 for everything the user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<UqError>() {
            return match e {
                UqError::Divergence { .. }
                | UqError::Cholesky { .. }
                | UqError::NonFinite { .. }
                | UqError::NonPositiveVariance { .. }
                | UqError::Solver(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<toml::de::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
