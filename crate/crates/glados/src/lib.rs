//! File formats, prior-model clients, pipeline stages, and the command-line
//! front end built on `glados-core`.

pub mod bundle;
pub mod cli;
pub mod clients;
pub mod config;
pub mod formats;
pub mod imgops;
pub mod runlog;
pub mod stages;

pub use glados_core as core;

use stages::evaluate::EvaluationReport;
use stages::{RunContext, StageResult};

/// Runs every stage in order through the run directory:
/// bridge, reconstruct, expand (with consistency sampling), refine, evaluate.
pub fn run_pipeline(ctx: &mut RunContext) -> StageResult<EvaluationReport> {
    stages::bridge::run(ctx)?;
    stages::reconstruct::run(ctx)?;
    stages::expand::run(ctx)?;
    stages::refine::run(ctx)?;
    stages::evaluate::run(ctx)
}
