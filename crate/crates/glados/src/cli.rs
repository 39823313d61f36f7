//! Command-line interface.
//!
//! Exit codes: 0 success, 1 configuration error or missing artifact,
//! 2 prior-client error, 3 reconstruction failure (the report is still
//! written).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use glados_core::synth;

use crate::config::{Overrides, RunConfig};
use crate::stages::evaluate::{aggregate, EvaluationReport};
use crate::stages::{self, RunContext, StageError, StageResult};
use crate::{bundle, formats, run_pipeline};

pub const ENDPOINTS_ENV: &str = "GLADOS_ENDPOINTS";

#[derive(Debug, Parser)]
#[command(name = "glados", version, about = "Reconstruct one Gaussian scene from two views that share no content")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Serve every operator without an endpoint from the in-process mocks.
    #[arg(long, global = true)]
    pub mock: bool,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Run directory (for `synth`, the bundle directory).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Remote operator, e.g. `depth=http://127.0.0.1:8080`. Repeatable.
    #[arg(long = "endpoint", global = true, value_name = "STAGE=URL")]
    pub endpoints: Vec<String>,
    /// Number of intermediate trajectory poses.
    #[arg(long, global = true, value_name = "N")]
    pub trajectory_n: Option<usize>,
    /// Input image; give exactly two.
    #[arg(long = "input", global = true, value_name = "PNG")]
    pub inputs: Vec<PathBuf>,
    /// Synthetic bundle supplying intrinsics and mock fixtures.
    #[arg(long, global = true, value_name = "DIR")]
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic disjoint-view bundle.
    Synth,
    /// Generate and select the anchor image.
    Bridge,
    /// Pointmaps, global alignment, and the coarse scaffold.
    Reconstruct,
    /// Warp-and-inpaint expansion, then multiview consistency sampling.
    Expand,
    /// Anchored grid inpainting cycles.
    Refine,
    /// Every stage from bridge to evaluate.
    Run,
    /// Score the refined scene and export trajectory frames.
    Evaluate,
    /// Summarize the reports of several run directories.
    Aggregate {
        runs: Vec<PathBuf>,
        /// Also write the summary as CSV.
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            mock: self.mock,
            seed: self.seed,
            out: self.out.clone(),
            endpoints: self.endpoints.clone(),
            trajectory_n: self.trajectory_n,
            inputs: self.inputs.clone(),
            fixture: self.fixture.clone(),
        }
    }
}

fn resolve(common: &CommonArgs) -> StageResult<RunConfig> {
    let env = std::env::var(ENDPOINTS_ENV).ok();
    RunConfig::resolve(&common.overrides(), env.as_deref()).map_err(|e| StageError::Config(e.to_string()))
}

/// Writes a synthetic bundle for `seed` into `dir`.
pub fn write_bundle(cfg: &RunConfig, dir: &std::path::Path) -> StageResult<()> {
    let spec = cfg.synth.spec(cfg.seed).map_err(|e| StageError::Config(e.to_string()))?;
    let b = synth::generate(&spec).map_err(|e| StageError::Config(format!("synth: {e}")))?;
    bundle::save(&b, &spec, dir)?;
    Ok(())
}

/// `run --mock` without inputs builds a bundle under the run directory and
/// uses it as both input pair and fixture.
fn prepare_run(cfg: &mut RunConfig) -> StageResult<()> {
    if !cfg.inputs.is_empty() {
        return Ok(());
    }
    if !cfg.mock {
        return Err(StageError::Config("run needs two --input images (or --mock for a synthetic bundle)".into()));
    }
    let dir = match &cfg.fixture {
        Some(d) => d.clone(),
        None => {
            let d = cfg.out.join("bundle");
            write_bundle(cfg, &d)?;
            cfg.fixture = Some(d.clone());
            d
        }
    };
    cfg.inputs = bundle::input_paths(&dir).to_vec();
    Ok(())
}

/// Reports written after an aborted stage so every failure leaves a report.
fn after_failure(ctx: &RunContext, e: &StageError) {
    if matches!(e, StageError::Client(_) | StageError::Reconstruction(_)) && !ctx.path("eval/report.json").exists()
        || matches!(e, StageError::Client(_))
    {
        if let Err(err) = stages::evaluate::report_failure(ctx) {
            log::warn!("could not write failure report: {err}");
        }
    }
}

fn execute(cli: &Cli) -> StageResult<()> {
    if let Command::Aggregate { runs, csv } = &cli.command {
        let reports = runs
            .iter()
            .map(|r| formats::read_json::<EvaluationReport>(&r.join("eval/report.json")).map_err(StageError::from))
            .collect::<StageResult<Vec<_>>>()?;
        let summary = aggregate(&reports);
        print!("{}", summary.to_table());
        if let Some(path) = csv {
            formats::write(path, summary.to_csv().as_bytes())?;
        }
        return Ok(());
    }
    let mut cfg = resolve(&cli.common)?;
    if let Command::Synth = cli.command {
        let out = cfg.out.clone();
        write_bundle(&cfg, &out)?;
        println!("bundle written to {}", out.display());
        return Ok(());
    }
    if let Command::Run = cli.command {
        prepare_run(&mut cfg)?;
    }
    let mut ctx = RunContext::new(cfg);
    let result = match cli.command {
        Command::Bridge => stages::bridge::run(&mut ctx),
        Command::Reconstruct => stages::reconstruct::run(&mut ctx),
        Command::Expand => stages::expand::run(&mut ctx),
        Command::Refine => stages::refine::run(&mut ctx),
        Command::Evaluate => stages::evaluate::run(&mut ctx).map(|r| print_report(&r)),
        Command::Run => run_pipeline(&mut ctx).map(|r| print_report(&r)),
        Command::Synth | Command::Aggregate { .. } => unreachable!(),
    };
    if let Err(e) = &result {
        after_failure(&ctx, e);
    }
    result
}

fn print_report(r: &EvaluationReport) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    println!(
        "{}: photo_error {} mean_hole_ratio {} frames {}",
        r.scene_id,
        f(r.photo_error),
        f(r.mean_hole_ratio),
        r.frames_manifest.len()
    );
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("glados: {e}");
            e.exit_code()
        }
    }
}
