//! `survmark`: survival analysis and facial-biomarker evaluation runs.
//!
//! Exit codes: 0 success, 1 analysis failure, 2 I/O or usage error.

mod bundle;
mod commands;
mod terms;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use survmark_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "survmark", version, about = "Survival analysis and facial-biomarker evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with parameters; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct CohortInput {
    #[arg(long)]
    pub cohort: PathBuf,
    /// JSON column mapping for non-canonical headers.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with a ground-truth sidecar.
    Simulate(commands::SimulateArgs),
    /// Fit a risk (ranking loss) or age (MAE) head on embeddings.
    Train(commands::TrainArgs),
    /// Concordance and time-dependent AUC of a marker.
    Metrics(commands::MetricsArgs),
    /// Univariate and multivariable Cox regression.
    Cox(commands::CoxArgs),
    /// Kaplan-Meier curves, log-rank tests and follow-up by stratum.
    Km(commands::KmArgs),
    /// Age-balanced resampling of a cohort.
    Balance(commands::BalanceArgs),
    /// Project attention grids onto a face mesh and export OBJ.
    Attention(commands::AttentionArgs),
}

/// Failure raised by the analysis itself rather than by its inputs.
#[derive(Debug)]
pub struct AnalysisFailure(pub String);

impl std::fmt::Display for AnalysisFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for AnalysisFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<AnalysisFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<CoreError>() {
        Some(
            CoreError::Io(_)
            | CoreError::Csv(_)
            | CoreError::Json(_)
            | CoreError::MissingColumn(_)
            | CoreError::UnknownName(_)
            | CoreError::LengthMismatch(_),
        ) => 2,
        Some(_) => 1,
        None => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Cox(a) => commands::cox(a),
        Command::Km(a) => commands::km(a),
        Command::Balance(a) => commands::balance(a),
        Command::Attention(a) => commands::attention(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
