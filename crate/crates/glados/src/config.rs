//! Run configuration. Sources are layered: built-in defaults, then the run
//! directory's `config.resolved.json` (for stage commands resuming a run),
//! then a TOML file, then command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glados_core::align::{AlignConfig, ScaffoldConfig};
use glados_core::grid::NoiseSchedule;
use glados_core::optim::OptimizerConfig;
use glados_core::synth::{SceneLayout, SyntheticSceneSpec, TextureStyle};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::clients::Operator;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {detail}")]
    Read { path: PathBuf, detail: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Number of candidate anchor images.
    pub candidates: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { candidates: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub max_iterations: usize,
    pub step: f64,
    pub init_quantile: f64,
    pub fuse_drop_quantile: f64,
    pub fuse_stride: usize,
    pub neighbors: usize,
    pub scaffold_opacity: f64,
    /// Horizontal field of view assumed for input images when no bundle
    /// supplies intrinsics.
    pub fov_deg: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        let a = AlignConfig::default();
        let s = ScaffoldConfig::default();
        Self {
            max_iterations: a.max_iterations,
            step: a.step,
            init_quantile: a.init_quantile,
            fuse_drop_quantile: a.fuse_drop_quantile,
            fuse_stride: a.fuse_stride,
            neighbors: s.neighbors,
            scaffold_opacity: s.opacity,
            fov_deg: 70.0,
        }
    }
}

impl ReconstructConfig {
    pub fn align(&self) -> AlignConfig {
        AlignConfig {
            max_iterations: self.max_iterations,
            step: self.step,
            init_quantile: self.init_quantile,
            fuse_drop_quantile: self.fuse_drop_quantile,
            fuse_stride: self.fuse_stride,
        }
    }

    pub fn scaffold(&self) -> ScaffoldConfig {
        ScaffoldConfig {
            neighbors: self.neighbors,
            opacity: self.scaffold_opacity,
            ..ScaffoldConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandConfig {
    /// Every `subsample`-th trajectory pose is visited, starting from the
    /// `subsample`-th.
    pub subsample: usize,
    pub hole_alpha_threshold: f64,
    pub significant_hole_ratio: f64,
    pub inject_opt_steps: usize,
    pub lift_stride: usize,
    pub mcs_views: usize,
    pub mcs_resolution: [usize; 2],
    pub mcs_noise_steps: usize,
    pub mcs_total_steps: usize,
    pub mcs_opt_steps: usize,
    pub mcs_center_lr: f64,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            subsample: 10,
            hole_alpha_threshold: 0.05,
            significant_hole_ratio: 0.02,
            inject_opt_steps: 256,
            lift_stride: 2,
            mcs_views: 8,
            mcs_resolution: [512, 512],
            mcs_noise_steps: 10,
            mcs_total_steps: 50,
            mcs_opt_steps: 2560,
            mcs_center_lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub cycles: usize,
    pub noise_start: f64,
    pub noise_end: f64,
    pub denoise_passes: usize,
    pub opt_steps: usize,
    pub hole_alpha_threshold: f64,
    pub upscale_factor: usize,
    pub lift_stride: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            cycles: 5,
            noise_start: 0.20,
            noise_end: 0.0005,
            denoise_passes: 4,
            opt_steps: 300,
            hole_alpha_threshold: 0.05,
            upscale_factor: 2,
            lift_stride: 2,
        }
    }
}

impl RefineConfig {
    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            cycles: self.cycles,
            start: self.noise_start,
            end: self.noise_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub hole_alpha_threshold: f64,
    pub export_frames: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            hole_alpha_threshold: 0.05,
            export_frames: true,
        }
    }
}

/// Parameters of the synthetic bundle built by `synth` and by `run --mock`
/// without inputs. The bundle seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub layout: String,
    pub texture: String,
    pub extent: [f64; 3],
    pub primitive_count: usize,
    pub separation_deg: f64,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub pointmap_noise: f64,
    pub random_pair_scales: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SyntheticSceneSpec::default();
        Self {
            layout: layout_name(s.layout).into(),
            texture: s.texture.as_str().into(),
            extent: s.extent.into(),
            primitive_count: s.primitive_count,
            separation_deg: s.separation_deg,
            width: s.width,
            height: s.height,
            fov_deg: s.fov_deg,
            pointmap_noise: s.pointmap_noise,
            random_pair_scales: s.random_pair_scales,
        }
    }
}

fn layout_name(l: SceneLayout) -> &'static str {
    match l {
        SceneLayout::Room => "room",
        SceneLayout::Clusters => "clusters",
    }
}

impl SynthConfig {
    pub fn spec(&self, seed: u64) -> Result<SyntheticSceneSpec, ConfigError> {
        let layout = match self.layout.as_str() {
            "room" => SceneLayout::Room,
            "clusters" => SceneLayout::Clusters,
            other => return Err(invalid(format!("synth.layout: unknown layout {other}"))),
        };
        let texture = TextureStyle::parse(&self.texture)
            .ok_or_else(|| invalid(format!("synth.texture: unknown style {}", self.texture)))?;
        let spec = SyntheticSceneSpec {
            seed,
            layout,
            texture,
            extent: Vector3::from(self.extent),
            primitive_count: self.primitive_count,
            separation_deg: self.separation_deg,
            width: self.width,
            height: self.height,
            fov_deg: self.fov_deg,
            pointmap_noise: self.pointmap_noise,
            random_pair_scales: self.random_pair_scales,
        };
        spec.validate().map_err(|e| invalid(format!("synth: {e}")))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// The two input images, in sequence order.
    pub inputs: Vec<PathBuf>,
    /// Synthetic bundle supplying intrinsics and mock fixtures.
    pub fixture: Option<PathBuf>,
    /// Operators without an endpoint use the in-process mock.
    pub mock: bool,
    /// Operator name → server root URL.
    pub endpoints: BTreeMap<String, String>,
    pub out: PathBuf,
    pub trajectory_n: usize,
    pub bridge: BridgeConfig,
    pub reconstruct: ReconstructConfig,
    pub expand: ExpandConfig,
    pub refine: RefineConfig,
    pub evaluate: EvaluateConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            inputs: Vec::new(),
            fixture: None,
            mock: false,
            endpoints: BTreeMap::new(),
            out: PathBuf::from("run"),
            trajectory_n: 200,
            bridge: BridgeConfig::default(),
            reconstruct: ReconstructConfig::default(),
            expand: ExpandConfig::default(),
            refine: RefineConfig::default(),
            evaluate: EvaluateConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Command-line values that override file settings when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub mock: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub endpoints: Vec<String>,
    pub trajectory_n: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub fixture: Option<PathBuf>,
}

pub const RESOLVED_NAME: &str = "config.resolved.json";

/// Parses `STAGE=URL,STAGE=URL` (the env-var form) or a single `STAGE=URL`.
pub fn parse_endpoints(spec: &str) -> Result<Vec<(String, String)>, ConfigError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| invalid(format!("endpoint {item:?} is not STAGE=URL")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn merge_toml(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Layers defaults, an existing resolved config under the output
    /// directory, the config file, environment endpoints, and flags.
    pub fn resolve(o: &Overrides, env_endpoints: Option<&str>) -> Result<Self, ConfigError> {
        let file: Option<toml::Value> = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    detail: e.to_string(),
                })?;
                Some(toml::from_str(&text).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    detail: e.to_string(),
                })?)
            }
            None => None,
        };
        let out = o
            .out
            .clone()
            .or_else(|| file.as_ref()?.get("out")?.as_str().map(PathBuf::from))
            .unwrap_or_else(|| RunConfig::default().out);

        let mut merged = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
        let resolved = out.join(RESOLVED_NAME);
        if resolved.exists() {
            let prior: RunConfig = crate::formats::read_json(&resolved).map_err(|e| ConfigError::Read {
                path: resolved.clone(),
                detail: e.to_string(),
            })?;
            merge_toml(&mut merged, toml::Value::try_from(prior).expect("config serializes"));
        }
        if let Some(file) = file {
            merge_toml(&mut merged, file);
        }
        let mut cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.message().to_string()))?;

        if cfg.endpoints.is_empty() {
            if let Some(env) = env_endpoints {
                cfg.endpoints.extend(parse_endpoints(env)?);
            }
        }
        for e in &o.endpoints {
            cfg.endpoints.extend(parse_endpoints(e)?);
        }
        cfg.out = out;
        cfg.mock |= o.mock;
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(n) = o.trajectory_n {
            cfg.trajectory_n = n;
        }
        if !o.inputs.is_empty() {
            cfg.inputs = o.inputs.clone();
        }
        if o.fixture.is_some() {
            cfg.fixture = o.fixture.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for k in self.endpoints.keys() {
            if Operator::parse(k).is_none() {
                return Err(invalid(format!("endpoint for unknown operator {k}")));
            }
        }
        if !(self.inputs.is_empty() || self.inputs.len() == 2) {
            return Err(invalid(format!("expected exactly two inputs, got {}", self.inputs.len())));
        }
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(format!("{name} must lie in (0, 1)")))
            }
        };
        let e = &self.expand;
        frac("expand.hole_alpha_threshold", e.hole_alpha_threshold)?;
        frac("expand.significant_hole_ratio", e.significant_hole_ratio)?;
        frac("refine.hole_alpha_threshold", self.refine.hole_alpha_threshold)?;
        frac("evaluate.hole_alpha_threshold", self.evaluate.hole_alpha_threshold)?;
        let counts = [
            ("trajectory_n", self.trajectory_n),
            ("bridge.candidates", self.bridge.candidates),
            ("expand.subsample", e.subsample),
            ("expand.inject_opt_steps", e.inject_opt_steps),
            ("expand.lift_stride", e.lift_stride),
            ("expand.mcs_views", e.mcs_views),
            ("expand.mcs_total_steps", e.mcs_total_steps),
            ("expand.mcs_opt_steps", e.mcs_opt_steps),
            ("expand.mcs_resolution", e.mcs_resolution[0].min(e.mcs_resolution[1])),
            ("refine.denoise_passes", self.refine.denoise_passes),
            ("refine.opt_steps", self.refine.opt_steps),
            ("refine.upscale_factor", self.refine.upscale_factor),
            ("refine.lift_stride", self.refine.lift_stride),
            ("reconstruct.fuse_stride", self.reconstruct.fuse_stride),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be at least 1")));
        }
        if e.mcs_noise_steps > e.mcs_total_steps {
            return Err(invalid("expand.mcs_noise_steps exceeds expand.mcs_total_steps"));
        }
        if e.mcs_views > self.trajectory_n {
            return Err(invalid("expand.mcs_views exceeds trajectory_n"));
        }
        if !(e.mcs_center_lr > 0.0) {
            return Err(invalid("expand.mcs_center_lr must be positive"));
        }
        if !(self.reconstruct.fov_deg > 0.0 && self.reconstruct.fov_deg < 180.0) {
            return Err(invalid("reconstruct.fov_deg must lie in (0, 180)"));
        }
        self.refine
            .schedule()
            .validate()
            .map_err(|e| invalid(format!("refine: {e}")))?;
        Ok(())
    }

    pub fn endpoint_map(&self) -> BTreeMap<Operator, String> {
        self.endpoints
            .iter()
            .filter_map(|(k, v)| Some((Operator::parse(k)?, v.clone())))
            .collect()
    }

    pub fn refine_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::with_steps(self.refine.opt_steps)
    }

    pub fn expand_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::with_steps(self.expand.inject_opt_steps)
    }

    pub fn mcs_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            lr_mean: self.expand.mcs_center_lr,
            ..OptimizerConfig::with_steps(self.expand.mcs_opt_steps)
        }
    }

    pub fn save_resolved(&self, dir: &Path) -> Result<(), crate::formats::FormatError> {
        crate::formats::write_json(&dir.join(RESOLVED_NAME), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 3\ntrajectory_n = 50\n[refine]\ncycles = 2\n").unwrap();
        let o = Overrides {
            config: Some(file.clone()),
            seed: Some(9),
            out: Some(dir.path().join("out")),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(&o, None).unwrap();
        assert_eq!((c.seed, c.trajectory_n, c.refine.cycles), (9, 50, 2));
        assert_eq!(c.refine.opt_steps, 300);
        std::fs::write(&file, "[refine]\nbogus = 1\n").unwrap();
        assert!(RunConfig::resolve(&o, None).is_err());
    }

    #[test]
    fn endpoints_from_env_and_flags() {
        let o = Overrides {
            endpoints: vec!["depth=http://b".into()],
            out: Some(PathBuf::from("/nonexistent/out")),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(&o, Some("depth=http://a, upscale=http://u")).unwrap();
        assert_eq!(c.endpoints["depth"], "http://b");
        assert_eq!(c.endpoints["upscale"], "http://u");
        let o = Overrides {
            endpoints: vec!["warp=http://x".into()],
            out: Some(PathBuf::from("/nonexistent/out")),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(&o, None).is_err());
    }
}
