//! Scenario runner. `run` executes a scenario file and reports; `verify`
//! only parses and validates it. The exit status is zero exactly when
//! every invariant held (or, for settlement-matrix scenarios, when every
//! enumerated case settled by the rules).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use agora_core::matrix::run_matrix;
use agora_core::scenario::{ScenarioFile, ScenarioKind};

#[derive(Parser)]
#[command(
    name = "agora",
    version,
    about = "Deterministic simulator for a notarized data marketplace with batched micropayments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and print its report.
    Run {
        /// Scenario file (JSON).
        file: PathBuf,
        /// Replace the seed stored in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the machine-readable report (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the block-by-block trace (JSON lines) here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Parse and validate a scenario file without executing it.
    Verify {
        /// Scenario file (JSON).
        file: PathBuf,
    },
}

/// Print without dying when stdout is a pipe that closed early.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn load(path: &Path) -> Result<ScenarioFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ScenarioFile::from_slice(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn write_out(path: Option<&Path>, content: &str, what: &str) -> Result<()> {
    if let Some(path) = path {
        fs::write(path, content).with_context(|| format!("writing {what} to {}", path.display()))?;
    }
    Ok(())
}

fn run(file: &Path, seed: Option<u64>, report: Option<&Path>, trace: Option<&Path>) -> Result<bool> {
    let scenario = load(file)?;
    match scenario.kind {
        ScenarioKind::Protocol => {
            let (run_report, trace_text) = scenario.run_protocol(seed)?;
            write_out(report, &run_report.to_json(), "report")?;
            write_out(trace, &trace_text, "trace")?;
            emit(&run_report.render_text());
            Ok(run_report.invariants_ok)
        }
        ScenarioKind::ChallengeMatrix => {
            let matrix_report = run_matrix(&scenario.matrix, &scenario.ledger);
            let json =
                serde_json::to_string_pretty(&matrix_report).expect("matrix report serializes");
            write_out(report, &json, "report")?;
            // Matrix runs have no block-by-block life; an empty trace keeps
            // the two-file contract for every scenario kind.
            write_out(trace, "", "trace")?;
            emit(&format!(
                "settlement matrix: {} cases ({} honest, {} fraudulent), {} failures\n",
                matrix_report.cases,
                matrix_report.honest_cases,
                matrix_report.fraud_cases,
                matrix_report.failures.len()
            ));
            for failure in &matrix_report.failures {
                emit(&format!(
                    "  payments {} sellers {} inclusion {:#b} locks {:#b} to {} declared {} (honest {}): {}\n",
                    failure.payments,
                    failure.sellers,
                    failure.inclusion_mask,
                    failure.lock_mask,
                    failure.to_index,
                    failure.declared,
                    failure.honest,
                    failure.detail
                ));
            }
            Ok(matrix_report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            file,
            seed,
            report,
            trace,
        } => run(file, *seed, report.as_deref(), trace.as_deref()),
        Command::Verify { file } => match load(file) {
            Ok(scenario) => {
                emit(&format!("ok: {} ({:?})\n", scenario.name, scenario.kind));
                Ok(true)
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("run finished with violations");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
