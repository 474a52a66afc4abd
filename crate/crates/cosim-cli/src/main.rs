//! `cosim`: run co-simulation scenarios and analyze their output.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! faults. Log verbosity comes from the `COSIM_LOG_LEVEL` environment
//! variable (`error`..`trace`).

mod analyze;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cosim_core::scenario::{self, ScenarioConfig, ScenarioError};
use cosim_core::time::ClockMode;

#[derive(Parser)]
#[command(
    name = "cosim",
    version,
    about = "Co-simulation scenario runner and analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Virtual,
    Realtime,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Latency,
    Fidelity,
    Decompose,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario described by a JSON config into an output directory.
    Run {
        /// Scenario config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for traces and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's clock mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Produce a report from a completed run directory.
    Analyze {
        /// Run directory produced by `cosim run`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        report: ReportArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("COSIM_LOG_LEVEL")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::from(0),
        Err(e @ ScenarioError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            mode,
        } => run(config, out, seed, mode),
        Command::Analyze { input, report } => {
            let kind = match report {
                ReportArg::Latency => analyze::ReportKind::Latency,
                ReportArg::Fidelity => analyze::ReportKind::Fidelity,
                ReportArg::Decompose => analyze::ReportKind::Decompose,
            };
            let out = analyze::analyze(&input, kind)?;
            println!("{}", out.summary);
            for f in out.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn run(
    config_path: PathBuf,
    out: PathBuf,
    seed: Option<u64>,
    mode: Option<ModeArg>,
) -> Result<(), ScenarioError> {
    let text = std::fs::read_to_string(&config_path).map_err(|e| {
        ScenarioError::Config(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    // Parse first, validate after command-line overrides are applied.
    let mut config: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| ScenarioError::Config(e.to_string()))?;
    if let Some(seed) = seed {
        config.seed = Some(seed);
    }
    if let Some(mode) = mode {
        config.mode = match mode {
            ModeArg::Virtual => ClockMode::Virtual,
            ModeArg::Realtime => ClockMode::Realtime,
        };
    }
    config.validate()?;

    match scenario::run(&config, &out) {
        Ok(summary) => {
            println!(
                "run complete: scenario={} mode={:?} out={}",
                config.scenario.as_str(),
                config.mode,
                summary.out_dir.display()
            );
            for (key, value) in &summary.metrics {
                println!("  {key} = {value}");
            }
            println!("manifest: {}", summary.manifest_path.display());
            Ok(())
        }
        Err(e @ ScenarioError::Config(_)) => Err(e),
        Err(e) => {
            // Leave whatever partial outputs exist, plus an error manifest
            // so the directory explains itself.
            let _ = std::fs::create_dir_all(&out);
            let error_manifest = serde_json::json!({
                "scenario": config.scenario.as_str(),
                "error": e.to_string(),
                "partial": true,
            });
            let _ = std::fs::write(
                out.join("error_manifest.json"),
                format!(
                    "{}\n",
                    serde_json::to_string_pretty(&error_manifest).unwrap_or_default()
                ),
            );
            Err(e)
        }
    }
}
