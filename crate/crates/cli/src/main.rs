//! `pointnls <subcommand> --config <path> [--out <dir>] [--jobs <n>]`
//!
//! Exit codes: 0 ok, 2 validation failure, 3 numerical-guard failure,
//! 4 check-suite failure.

mod artifacts;
mod config;
mod runner;

use artifacts::ArtifactWriter;
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pointnls", version, about = "Point-coupled cubic NLS laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for study sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Static validation: parse the config and list derived quantities.
    Validate,
    /// Solve the boundary trace of an atomic coupling and reconstruct fields.
    SolveDelta,
    /// Integrate the density-coupled equation with the split-step solver.
    SolveConcentrated,
    /// Compare concentrated runs against the point-coupling limit.
    ConvergeEps,
    /// Time self-convergence study of the trace solver.
    SelfConverge,
    /// Run every diagnostic check and emit pass/fail reports.
    CheckSuite,
    /// Extract asymptotic states and their Cauchy defects.
    Scattering,
    /// Amplitude sweeps: spacetime-bound ratios and the small-data regime.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SolveDelta => "solve-delta",
            Command::SolveConcentrated => "solve-concentrated",
            Command::ConvergeEps => "converge-eps",
            Command::SelfConverge => "self-converge",
            Command::CheckSuite => "check-suite",
            Command::Scattering => "scattering",
            Command::Sweep => "sweep",
        }
    }
}

fn emit_error(kind: &str, err: &anyhow::Error) {
    let payload = serde_json::json!({
        "error": kind,
        "message": format!("{err:#}"),
    });
    eprintln!("{payload}");
}

/// Guard failures (resolution, truncation, step size) exit with code 3;
/// everything else configuration-shaped is a validation failure (code 2).
fn is_guard_error(err: &anyhow::Error) -> bool {
    use pointnls_core::Error as E;
    err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<E>(),
            Some(
                E::UnderResolvedProfile { .. }
                    | E::TruncationDomain { .. }
                    | E::StepSizeTooLarge { .. }
                    | E::AboveNyquist { .. }
            )
        )
    }) || err.to_string().contains("under-resolved")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            emit_error(
                "validation",
                &anyhow::anyhow!("--config <path> is required"),
            );
            return ExitCode::from(2);
        }
    };

    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            emit_error("validation", &anyhow::anyhow!("--jobs: {e}"));
            return ExitCode::from(2);
        }
    }

    let config = match ExperimentConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            emit_error("validation", &e);
            return ExitCode::from(2);
        }
    };

    if matches!(cli.command, Command::Validate) {
        return match runner::validate(&config) {
            Ok(report) => {
                print!("{report}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                emit_error("validation", &e);
                ExitCode::from(2)
            }
        };
    }

    // pre-flight validation for all running subcommands
    if let Err(e) = config.validate() {
        emit_error("validation", &e);
        return ExitCode::from(2);
    }

    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.directory));
    let mut writer = match ArtifactWriter::new(&out_dir) {
        Ok(w) => w,
        Err(e) => {
            emit_error("io", &e);
            return ExitCode::from(2);
        }
    };

    match runner::run_subcommand(cli.command.name(), &config, &mut writer) {
        Ok(Some(reports)) => {
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.pass)
                .map(|r| r.name.as_str())
                .collect();
            println!(
                "check-suite: {} checks, {} failed{}{}",
                reports.len(),
                failed.len(),
                if failed.is_empty() { "" } else { ": " },
                failed.join(", ")
            );
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            }
        }
        Ok(None) => {
            println!(
                "{}: artifacts written to {}",
                cli.command.name(),
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            if is_guard_error(&e) {
                emit_error("numerical-guard", &e);
                ExitCode::from(3)
            } else {
                emit_error("validation", &e);
                ExitCode::from(2)
            }
        }
    }
}
