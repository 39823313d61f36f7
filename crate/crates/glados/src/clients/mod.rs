//! Prior-model clients. Each operator is a trait; a client is either an
//! in-process seeded mock or a remote endpoint speaking the JSON protocol in
//! [`protocol`].

pub mod mock;
pub mod protocol;
pub mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use glados_core::align::PairPointmap;
use glados_core::{CameraView, DepthMap, Mask, RgbImage};

pub use mock::{MockBackend, MockFixture};
pub use remote::RemoteClient;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("client {stage} failed: {detail}")]
pub struct ClientError {
    pub stage: String,
    pub detail: String,
}

impl ClientError {
    pub fn new(stage: Operator, detail: impl Into<String>) -> Self {
        Self {
            stage: stage.as_str().to_string(),
            detail: detail.into(),
        }
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// The nine prior operators, named after their endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operator {
    Prompt,
    Generate,
    Score,
    Pointmaps,
    Inpaint,
    Depth,
    Consistency,
    GridInpaint,
    Upscale,
}

impl Operator {
    pub const ALL: [Operator; 9] = [
        Self::Prompt,
        Self::Generate,
        Self::Score,
        Self::Pointmaps,
        Self::Inpaint,
        Self::Depth,
        Self::Consistency,
        Self::GridInpaint,
        Self::Upscale,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Prompt => "prompt",
            Self::Generate => "generate",
            Self::Score => "score",
            Self::Pointmaps => "pointmaps",
            Self::Inpaint => "inpaint",
            Self::Depth => "depth",
            Self::Consistency => "consistency",
            Self::GridInpaint => "grid_inpaint",
            Self::Upscale => "upscale",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.as_str() == s)
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait PromptEngine: Send + Sync {
    fn prompt(&self, a: &RgbImage, b: &RgbImage, meta_prompt: &str, seed: u64) -> ClientResult<String>;
}

pub trait Generator: Send + Sync {
    fn generate(&self, a: &RgbImage, b: &RgbImage, prompt: &str, seed: u64) -> ClientResult<RgbImage>;
}

pub trait Evaluator: Send + Sync {
    /// One score per candidate, higher is better.
    fn score(&self, candidates: &[RgbImage], a: &RgbImage, b: &RgbImage, seed: u64) -> ClientResult<Vec<f64>>;
}

pub trait Geometry: Send + Sync {
    fn pointmaps(&self, image_i: &RgbImage, image_j: &RgbImage, view_i: u32, view_j: u32, seed: u64)
        -> ClientResult<PairPointmap>;
}

pub trait Inpainter: Send + Sync {
    /// Must return `image` unchanged wherever `mask` is false.
    fn inpaint(&self, image: &RgbImage, mask: &Mask, prompt: &str, seed: u64) -> ClientResult<RgbImage>;
}

pub trait DepthEstimator: Send + Sync {
    /// `camera` is a hint for fixture backends; model backends ignore it.
    fn depth(&self, image: &RgbImage, camera: Option<&CameraView>, seed: u64) -> ClientResult<DepthMap>;
}

pub trait Consistency: Send + Sync {
    /// Rectifies a batch of views after `noise_steps` of a `total_steps`
    /// schedule, without classifier-free guidance.
    fn rectify(&self, images: &[RgbImage], noise_steps: usize, total_steps: usize, seed: u64)
        -> ClientResult<Vec<RgbImage>>;
}

pub trait GridInpainter: Send + Sync {
    /// Must return `image` unchanged wherever `mask` is false.
    fn grid_inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        prompt: &str,
        noise_level: f64,
        denoise_passes: usize,
        seed: u64,
    ) -> ClientResult<RgbImage>;
}

pub trait Upscaler: Send + Sync {
    fn upscale(&self, image: &RgbImage, factor: usize, seed: u64) -> ClientResult<RgbImage>;
}

/// Where one operator's calls go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientMode {
    Mock,
    Remote(String),
}

impl fmt::Display for ClientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock => f.write_str("mock"),
            Self::Remote(url) => f.write_str(url),
        }
    }
}

/// One client per operator plus a record of how each was resolved.
#[derive(Clone)]
pub struct PriorClients {
    pub prompt_engine: Arc<dyn PromptEngine>,
    pub generator: Arc<dyn Generator>,
    pub evaluator: Arc<dyn Evaluator>,
    pub geometry: Arc<dyn Geometry>,
    pub inpaint: Arc<dyn Inpainter>,
    pub depth: Arc<dyn DepthEstimator>,
    pub consistency: Arc<dyn Consistency>,
    pub grid_inpaint: Arc<dyn GridInpainter>,
    pub upscale: Arc<dyn Upscaler>,
    modes: BTreeMap<Operator, ClientMode>,
}

impl PriorClients {
    /// Every operator served by `mock`.
    pub fn mock(mock: MockBackend) -> Self {
        Self::resolve(&BTreeMap::new(), Some(mock)).expect("mock covers every operator")
    }

    /// Operators listed in `endpoints` go remote; the rest use `mock`. Fails
    /// naming the first operator left without a client.
    pub fn resolve(endpoints: &BTreeMap<Operator, String>, mock: Option<MockBackend>) -> Result<Self, Operator> {
        let mock = mock.map(Arc::new);
        let mut modes = BTreeMap::new();
        for op in Operator::ALL {
            let mode = match endpoints.get(&op) {
                Some(url) => ClientMode::Remote(url.clone()),
                None if mock.is_some() => ClientMode::Mock,
                None => return Err(op),
            };
            modes.insert(op, mode);
        }
        macro_rules! pick {
            ($op:expr) => {{
                match &modes[&$op] {
                    ClientMode::Remote(url) => Arc::new(RemoteClient::new(url)) as _,
                    ClientMode::Mock => mock.clone().unwrap() as _,
                }
            }};
        }
        Ok(Self {
            prompt_engine: pick!(Operator::Prompt),
            generator: pick!(Operator::Generate),
            evaluator: pick!(Operator::Score),
            geometry: pick!(Operator::Pointmaps),
            inpaint: pick!(Operator::Inpaint),
            depth: pick!(Operator::Depth),
            consistency: pick!(Operator::Consistency),
            grid_inpaint: pick!(Operator::GridInpaint),
            upscale: pick!(Operator::Upscale),
            modes,
        })
    }

    pub fn modes(&self) -> &BTreeMap<Operator, ClientMode> {
        &self.modes
    }
}
