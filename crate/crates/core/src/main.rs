use std::path::PathBuf;
use std::process::ExitCode;

use action_lab::cli::{self, ExperimentConfig, RunOptions};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Runs energy-ledger, quasi-periodic and stability experiments from a TOML config.
#[derive(Parser)]
#[command(name = "action-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every scenario and write trajectories, summary and report.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and ACTION_LAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only the named scenario.
        #[arg(long)]
        only: Option<String>,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Also write SVG plots.
        #[arg(long)]
        plots: bool,
    },
    /// Print scenario names and their checks without running anything.
    List { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::List { config } => {
            for line in cli::list_scenarios(&load(&config)?) {
                println!("{line}");
            }
            Ok(0)
        }
        Command::Run {
            config,
            out,
            only,
            jobs,
            plots,
        } => {
            let cfg = load(&config)?;
            let opts = RunOptions { out, only, jobs, plots };
            let summary = cli::run(&cfg, &opts)?;
            for r in &summary.rows {
                println!("{:<24} {:<22} {}", r.scenario, r.check, r.verdict);
            }
            println!("outputs in {}", summary.output_dir.display());
            Ok(summary.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
