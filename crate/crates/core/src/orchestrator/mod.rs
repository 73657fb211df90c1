//! The outer prune-and-search loop and its configuration.

mod config;
mod run;

pub use config::RunConfig;
pub use run::{
    derive_seed, ladders_for, run_iterations, run_tyr, IterationReport, PlanFile, RunOutcome,
    RunSummary,
};
