//! Pipeline stages. Each stage reads the artifacts of the previous one from
//! the run directory and writes its own, so `run` and a sequence of stage
//! commands produce the same files.

pub mod bridge;
pub mod evaluate;
pub mod expand;
pub mod mcs;
pub mod reconstruct;
pub mod refine;

use std::path::{Path, PathBuf};

use glados_core::optim::{OptimError, Target};
use glados_core::pose::evaluation_trajectory;
use glados_core::seed::stream_seed;
use glados_core::synth::SyntheticSceneSpec;
use glados_core::{CameraView, GaussianScene, Intrinsics, RgbImage};
use serde::{Deserialize, Serialize};

use crate::clients::{ClientError, MockBackend, PriorClients};
use crate::config::RunConfig;
use crate::formats::{self, image, ply, pose, FormatError};
use crate::{bundle, formats::pose::PoseRecord};

pub const INPUTS_DIR: &str = "inputs";
pub const BRIDGE_DIR: &str = "bridge";
pub const RECONSTRUCT_DIR: &str = "reconstruct";
pub const EXPAND_DIR: &str = "expand";
pub const MCS_DIR: &str = "mcs";
pub const REFINE_DIR: &str = "refine";
pub const EVAL_DIR: &str = "eval";
pub const CLIENT_ERROR_FILE: &str = "client_error.json";

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {0}: run the earlier stage first")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("reconstruction failed: {0}")]
    Reconstruction(String),
}

impl StageError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingArtifact(_) | Self::Format(_) => 1,
            Self::Client(_) => 2,
            Self::Reconstruction(_) => 3,
        }
    }
}

impl From<OptimError> for StageError {
    fn from(e: OptimError) -> Self {
        Self::Reconstruction(format!("optimization: {e}"))
    }
}

pub type StageResult<T> = Result<T, StageError>;

/// Stage-level record of a client failure, read back by evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientFailure {
    pub stage: String,
    pub operator: String,
    pub detail: String,
}

/// Everything a stage needs: the resolved config and the run directory.
pub struct RunContext {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    /// Injected clients; built from the config on first use otherwise.
    clients: Option<PriorClients>,
}

impl RunContext {
    pub fn new(cfg: RunConfig) -> Self {
        let dir = cfg.out.clone();
        Self {
            cfg,
            dir,
            clients: None,
        }
    }

    /// Uses `clients` instead of resolving them from the config.
    pub fn with_clients(cfg: RunConfig, clients: PriorClients) -> Self {
        Self {
            clients: Some(clients),
            ..Self::new(cfg)
        }
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn seed(&self, stream: &str) -> u64 {
        stream_seed(self.cfg.seed, stream)
    }

    /// The configured clients: endpoints where given, mocks elsewhere when
    /// mock mode is on.
    pub fn clients(&mut self) -> StageResult<PriorClients> {
        if let Some(c) = &self.clients {
            return Ok(c.clone());
        }
        let mock = if self.cfg.mock {
            let fixture = match &self.cfg.fixture {
                Some(dir) => bundle::load_fixture(dir)?,
                None => Default::default(),
            };
            Some(MockBackend::new(fixture))
        } else {
            None
        };
        let clients = PriorClients::resolve(&self.cfg.endpoint_map(), mock).map_err(|op| {
            StageError::Config(format!("no client for operator {op}: pass --mock or --endpoint {op}=URL"))
        })?;
        self.clients = Some(clients.clone());
        Ok(clients)
    }

    /// Writes `config.resolved.json` and creates the run directory.
    pub fn save_config(&self) -> StageResult<()> {
        self.cfg.save_resolved(&self.dir)?;
        Ok(())
    }

    pub fn require(&self, rel: impl AsRef<Path>) -> StageResult<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(StageError::MissingArtifact(p))
        }
    }

    pub fn load_image(&self, rel: impl AsRef<Path>) -> StageResult<RgbImage> {
        Ok(image::load_rgb(&self.require(rel)?)?)
    }

    pub fn load_scene(&self, rel: impl AsRef<Path>) -> StageResult<GaussianScene> {
        Ok(ply::load(&self.require(rel)?)?)
    }

    /// The two input images as copied into the run directory.
    pub fn inputs(&self) -> StageResult<[RgbImage; 2]> {
        Ok([self.load_image("inputs/view0.png")?, self.load_image("inputs/view1.png")?])
    }

    /// Cameras of views 0 (first input), 1 (anchor), 2 (second input) in the
    /// reconstruction frame.
    pub fn cameras(&self) -> StageResult<[CameraView; 3]> {
        let path = self.require("reconstruct/cameras.json")?;
        let v = pose::load_views(&path)?;
        v.try_into()
            .map_err(|_| FormatError::malformed(&path, "expected three cameras").into())
    }

    /// Ground-truth targets: both inputs at their reconstructed cameras.
    pub fn anchor_targets(&self) -> StageResult<Vec<Target>> {
        let cams = self.cameras()?;
        let [a, b] = self.inputs()?;
        Ok(vec![Target::new(cams[0], a), Target::new(cams[2], b)])
    }

    /// The evaluation trajectory between the two inputs.
    pub fn trajectory(&self) -> StageResult<Vec<CameraView>> {
        let cams = self.cameras()?;
        evaluation_trajectory(&cams[0], &cams[2], self.cfg.trajectory_n)
            .map_err(|e| StageError::Config(format!("trajectory: {e}")))
    }

    /// Intrinsics of the input images: from the fixture bundle when there is
    /// one, otherwise from the configured field of view.
    pub fn intrinsics(&self, width: usize, height: usize) -> StageResult<Intrinsics> {
        if let Some(dir) = &self.cfg.fixture {
            let k = bundle::load_views(dir)?[0].intrinsics;
            if (k.width, k.height) != (width, height) {
                return Err(StageError::Config(format!(
                    "fixture cameras are {}x{} but inputs are {width}x{height}",
                    k.width, k.height
                )));
            }
            return Ok(k);
        }
        let spec = SyntheticSceneSpec {
            width,
            height,
            fov_deg: self.cfg.reconstruct.fov_deg,
            ..SyntheticSceneSpec::default()
        };
        Ok(spec.intrinsics())
    }

    pub fn record_client_failure(&self, stage: &str, e: &ClientError) -> StageResult<()> {
        let f = ClientFailure {
            stage: stage.to_string(),
            operator: e.stage.clone(),
            detail: e.detail.clone(),
        };
        formats::write_json(&self.path(CLIENT_ERROR_FILE), &f)?;
        Ok(())
    }

    pub fn write_timing(&self, stage_dir: &str, seconds: f64) -> StageResult<()> {
        formats::write_json(&self.path(stage_dir).join("timing.json"), &serde_json::json!({ "seconds": seconds }))?;
        Ok(())
    }
}

pub fn save_cameras(views: &[CameraView], path: &Path) -> StageResult<()> {
    let records: Vec<PoseRecord> = pose::to_records(views);
    formats::write_json(path, &records)?;
    Ok(())
}

/// Runs a stage body and, if it fails on a client error, records the
/// failing stage for evaluation before passing the error on.
/// A success clears a failure this stage recorded on an earlier attempt.
pub fn guard<T>(ctx: &RunContext, stage: &str, r: StageResult<T>) -> StageResult<T> {
    let marker = ctx.path(CLIENT_ERROR_FILE);
    match &r {
        Err(StageError::Client(e)) => ctx.record_client_failure(stage, e)?,
        Ok(_) if marker.exists() => {
            let f: ClientFailure = formats::read_json(&marker)?;
            if f.stage == stage {
                std::fs::remove_file(&marker).map_err(|e| FormatError::io(&marker, e))?;
            }
        }
        _ => {}
    }
    r
}
