//! Deterministic in-process stand-ins for the prior models. They make the
//! pipeline runnable and reproducible; they make no claim of fidelity.

use std::collections::{BTreeMap, BTreeSet};

use glados_core::align::PairPointmap;
use glados_core::image::Plane;
use glados_core::pose::unproject;
use glados_core::{render, CameraView, DepthMap, GaussianScene, Intrinsics, Mask, RgbImage, UnitQuaternion};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::imgops;

/// Scale and shift applied to rendered ground-truth depth by the mock depth
/// estimator, so alignment has a real affine ambiguity to resolve.
pub const DEPTH_SCALE: f64 = 1.02;
pub const DEPTH_SHIFT: f64 = 0.05;
/// Range of the crossfade weight used by the mock generator.
pub const CROSSFADE_RANGE: (f64, f64) = (0.35, 0.65);
/// Standard deviation of the mock grid inpainter's noise at noise level 1.
pub const GRID_NOISE_SIGMA: f64 = 0.25;

/// Ground truth that lets mocks answer with real geometry.
#[derive(Debug, Clone, Default)]
pub struct MockFixture {
    /// Ground-truth scene expressed in the run frame.
    pub scene: Option<GaussianScene>,
    /// Pair pointmaps keyed by `(view_i, view_j)`.
    pub pointmaps: BTreeMap<(u32, u32), PairPointmap>,
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub fixture: MockFixture,
    /// Return the consistency batch unchanged.
    pub identity_consistency: bool,
    /// Operators that fail every call, for error-path tests.
    pub failing: BTreeSet<Operator>,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self {
            fixture,
            ..Self::default()
        }
    }

    fn check(&self, op: Operator) -> ClientResult<()> {
        if self.failing.contains(&op) {
            return Err(ClientError::new(op, "mock configured to fail"));
        }
        Ok(())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn describe(c: [f64; 3]) -> String {
    let [r, g, b] = c.map(|v| (v * 255.0).round() as u8);
    format!("#{r:02x}{g:02x}{b:02x}")
}

impl PromptEngine for MockBackend {
    fn prompt(&self, a: &RgbImage, b: &RgbImage, meta_prompt: &str, _seed: u64) -> ClientResult<String> {
        self.check(Operator::Prompt)?;
        let words = meta_prompt.split_whitespace().count();
        Ok(format!(
            "A continuous interior joining a space dominated by {} with a space dominated by {}, \
             coherent lighting and materials ({words}-word brief).",
            describe(imgops::mean_color(a)),
            describe(imgops::mean_color(b)),
        ))
    }
}

impl Generator for MockBackend {
    fn generate(&self, a: &RgbImage, b: &RgbImage, _prompt: &str, seed: u64) -> ClientResult<RgbImage> {
        self.check(Operator::Generate)?;
        if !a.same_dims(b) {
            return Err(ClientError::new(Operator::Generate, "inputs differ in size"));
        }
        let t = rng(seed).random_range(CROSSFADE_RANGE.0..CROSSFADE_RANGE.1);
        Ok(imgops::blur(&imgops::lerp(a, b, t)))
    }
}

impl Evaluator for MockBackend {
    fn score(&self, candidates: &[RgbImage], a: &RgbImage, b: &RgbImage, _seed: u64) -> ClientResult<Vec<f64>> {
        self.check(Operator::Score)?;
        let reference = 0.5 * (imgops::mean_gradient(a) + imgops::mean_gradient(b));
        Ok(candidates
            .iter()
            .map(|c| -(imgops::mean_gradient(c) - reference).abs())
            .collect())
    }
}

/// Pointmaps of a fronto-parallel plane at depth 2, identical for both views.
fn planar_pointmaps(image_i: &RgbImage, image_j: &RgbImage, view_i: u32, view_j: u32) -> PairPointmap {
    let (w, h) = image_i.dims();
    let k = Intrinsics {
        fx: w as f64,
        fy: w as f64,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        width: w,
        height: h,
    };
    let view = CameraView {
        rotation: UnitQuaternion::IDENTITY,
        translation: Vector3::zeros(),
        intrinsics: k,
    };
    let pm = Plane::from_fn(w, h, |x, y| unproject(&Vector2::new(x as f64, y as f64), 2.0, &view).into());
    let conf = Plane::filled(w, h, 1.0);
    PairPointmap {
        view_i,
        view_j,
        pointmap_i: pm.clone(),
        confidence_i: conf.clone(),
        colors_i: image_i.clone(),
        pointmap_j: pm,
        confidence_j: conf,
        colors_j: image_j.clone(),
    }
}

impl Geometry for MockBackend {
    fn pointmaps(
        &self,
        image_i: &RgbImage,
        image_j: &RgbImage,
        view_i: u32,
        view_j: u32,
        _seed: u64,
    ) -> ClientResult<PairPointmap> {
        self.check(Operator::Pointmaps)?;
        if !image_i.same_dims(image_j) {
            return Err(ClientError::new(Operator::Pointmaps, "inputs differ in size"));
        }
        match self.fixture.pointmaps.get(&(view_i, view_j)) {
            Some(pm) if pm.pointmap_i.same_dims(image_i) => {
                // Geometry from the fixture, colors from what the client was shown.
                Ok(PairPointmap {
                    colors_i: image_i.clone(),
                    colors_j: image_j.clone(),
                    ..pm.clone()
                })
            }
            _ => Ok(planar_pointmaps(image_i, image_j, view_i, view_j)),
        }
    }
}

impl Inpainter for MockBackend {
    fn inpaint(&self, image: &RgbImage, mask: &Mask, _prompt: &str, _seed: u64) -> ClientResult<RgbImage> {
        self.check(Operator::Inpaint)?;
        if !image.same_dims(mask) {
            return Err(ClientError::new(Operator::Inpaint, "mask differs in size"));
        }
        Ok(imgops::push_pull_fill(image, mask))
    }
}

impl DepthEstimator for MockBackend {
    /// With a fixture scene and a camera hint: rendered ground-truth depth
    /// under a fixed affine perturbation, background filled with the farthest
    /// surface. Otherwise a plane tilted toward the bottom of the image.
    fn depth(&self, image: &RgbImage, camera: Option<&CameraView>, _seed: u64) -> ClientResult<DepthMap> {
        self.check(Operator::Depth)?;
        let (w, h) = image.dims();
        if let (Some(scene), Some(cam)) = (&self.fixture.scene, camera) {
            if cam.width() != w || cam.height() != h {
                return Err(ClientError::new(Operator::Depth, "camera hint differs from image size"));
            }
            let out = render(scene, cam);
            let valid = |i: usize| out.alpha.as_slice()[i] >= glados_core::DEPTH_VALID_ALPHA;
            let far = (0..out.depth.len())
                .filter(|i| valid(*i))
                .map(|i| out.depth.as_slice()[i])
                .fold(f64::NAN, f64::max);
            let far = if far.is_finite() { far } else { 1.0 };
            let data = (0..out.depth.len())
                .map(|i| DEPTH_SCALE * if valid(i) { out.depth.as_slice()[i] } else { far } + DEPTH_SHIFT)
                .collect();
            return Ok(DepthMap::from_vec(w, h, data).unwrap());
        }
        Ok(DepthMap::from_fn(w, h, |_, y| 3.0 - 1.5 * y as f64 / h.max(1) as f64))
    }
}

impl Consistency for MockBackend {
    /// Pulls each view toward its blurred self with strength
    /// `noise_steps / total_steps`.
    fn rectify(&self, images: &[RgbImage], noise_steps: usize, total_steps: usize, _seed: u64)
        -> ClientResult<Vec<RgbImage>> {
        self.check(Operator::Consistency)?;
        if total_steps == 0 || noise_steps > total_steps {
            return Err(ClientError::new(Operator::Consistency, "noise_steps must lie in [0, total_steps]"));
        }
        if self.identity_consistency {
            return Ok(images.to_vec());
        }
        let t = noise_steps as f64 / total_steps as f64;
        Ok(images.iter().map(|img| imgops::lerp(img, &imgops::blur(img), t)).collect())
    }
}

impl GridInpainter for MockBackend {
    /// Push-pull fill plus zero-mean noise scaled by `noise_level`, averaged
    /// over `denoise_passes` draws. Unmasked pixels are copied bit-exactly.
    fn grid_inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        _prompt: &str,
        noise_level: f64,
        denoise_passes: usize,
        seed: u64,
    ) -> ClientResult<RgbImage> {
        self.check(Operator::GridInpaint)?;
        if !image.same_dims(mask) {
            return Err(ClientError::new(Operator::GridInpaint, "mask differs in size"));
        }
        if denoise_passes == 0 || !(0.0..=1.0).contains(&noise_level) {
            return Err(ClientError::new(Operator::GridInpaint, "invalid noise level or pass count"));
        }
        let base = imgops::push_pull_fill(image, mask);
        let normal = Normal::new(0.0, GRID_NOISE_SIGMA * noise_level).unwrap();
        let mut r = rng(seed);
        let mut out = image.clone();
        for (i, (o, b)) in out.as_mut_slice().iter_mut().zip(base.as_slice()).enumerate() {
            if !mask.as_slice()[i] {
                continue;
            }
            let mut noise = [0.0; 3];
            for _ in 0..denoise_passes {
                noise.iter_mut().for_each(|n| *n += normal.sample(&mut r));
            }
            *o = [0, 1, 2].map(|c| (b[c] + noise[c] / denoise_passes as f64).clamp(0.0, 1.0));
        }
        Ok(out)
    }
}

impl Upscaler for MockBackend {
    fn upscale(&self, image: &RgbImage, factor: usize, _seed: u64) -> ClientResult<RgbImage> {
        self.check(Operator::Upscale)?;
        if factor == 0 {
            return Err(ClientError::new(Operator::Upscale, "factor must be positive"));
        }
        Ok(imgops::upsample(image, factor))
    }
}
