//! Declarative experiment runner behind the `action-lab` binary.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{Check, ExperimentConfig};
pub use runner::{run, RunOptions, RunSummary, SummaryRow, OUT_ENV};

/// `name: check, check` lines for `list`.
pub fn list_scenarios(config: &ExperimentConfig) -> Vec<String> {
    config
        .scenario
        .iter()
        .map(|s| {
            let checks: Vec<&str> = s.checks.iter().map(Check::name).collect();
            format!("{}: {}", s.name, checks.join(", "))
        })
        .collect()
}
