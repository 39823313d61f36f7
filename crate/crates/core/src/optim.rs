//! Photometric loss, analytic gradients, and first-order fitting of scene
//! parameters to target images.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::Vector3;
use thiserror::Error;

use crate::gaussian::{GaussianScene, Provenance, MAX_SCALE, MIN_SCALE};
use crate::image::{Mask, RgbImage};
use crate::math::{clamp, ln, sqrt};
use crate::pose::{CameraView, UnitQuaternion};
use crate::raster::{render, render_backward, PixelLoss, PrimitiveGrad};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;
const OPACITY_LOGIT_LIMIT: f64 = 15.0;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("target {index}: image is {image:?}, view is {view:?}")]
    DimensionMismatch {
        index: usize,
        image: (usize, usize),
        view: (usize, usize),
    },
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss {
        step: usize,
        last_finite: Box<GaussianScene>,
    },
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(&'static str),
}

/// An image the scene should reproduce from `view`; `mask` selects the
/// pixels that count (all of them when `None`).
#[derive(Debug, Clone)]
pub struct Target {
    pub view: CameraView,
    pub image: RgbImage,
    pub mask: Option<Mask>,
}

impl Target {
    pub fn new(view: CameraView, image: RgbImage) -> Self {
        Self {
            view,
            image,
            mask: None,
        }
    }

    fn check(&self, index: usize) -> Result<(), OptimError> {
        let view = (self.view.width(), self.view.height());
        let mask_ok = self.mask.as_ref().is_none_or(|m| m.dims() == view);
        if self.image.dims() != view || !mask_ok {
            return Err(OptimError::DimensionMismatch {
                index,
                image: self.image.dims(),
                view,
            });
        }
        Ok(())
    }

    fn valid_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.image.len(), |m| m.count())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub steps: usize,
    pub lr_mean: f64,
    pub lr_rotation: f64,
    pub lr_log_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    /// Primitives with these tags keep their parameters.
    pub frozen: Vec<Provenance>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr_mean: 1.6e-4,
            lr_rotation: 1e-3,
            lr_log_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            frozen: Vec::new(),
        }
    }
}

impl OptimizerConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if self.steps == 0 {
            return Err(OptimError::InvalidConfig("steps must be at least 1"));
        }
        let rates = [
            self.lr_mean,
            self.lr_rotation,
            self.lr_log_scale,
            self.lr_opacity,
            self.lr_color,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(OptimError::InvalidConfig("learning rates must be positive"));
        }
        Ok(())
    }
}

struct MaskedMse<'a> {
    target: &'a Target,
    weight: f64,
}

impl PixelLoss for MaskedMse<'_> {
    fn eval(&self, x: usize, y: usize, rgb: [f64; 3]) -> (f64, [f64; 3]) {
        if let Some(m) = &self.target.mask {
            if !*m.get(x, y) {
                return (0.0, [0.0; 3]);
            }
        }
        let g = self.target.image.get(x, y);
        let mut loss = 0.0;
        let mut grad = [0.0; 3];
        for c in 0..3 {
            let d = rgb[c] - g[c];
            loss += d * d;
            grad[c] = 2.0 * d * self.weight;
        }
        (loss * self.weight, grad)
    }
}

fn per_pixel_weight(t: &Target, n_targets: usize) -> f64 {
    let count = t.valid_count();
    if count == 0 {
        0.0
    } else {
        1.0 / (3.0 * count as f64 * n_targets as f64)
    }
}

/// Mean over targets of the masked per-pixel MSE (channel-averaged).
pub fn photometric_loss(scene: &GaussianScene, targets: &[Target]) -> Result<f64, OptimError> {
    let mut total = 0.0;
    for (i, t) in targets.iter().enumerate() {
        t.check(i)?;
        let w = per_pixel_weight(t, targets.len());
        if w == 0.0 {
            continue;
        }
        let out = render(scene, &t.view);
        for y in 0..t.image.height() {
            for x in 0..t.image.width() {
                if t.mask.as_ref().is_some_and(|m| !*m.get(x, y)) {
                    continue;
                }
                let (r, g) = (out.rgb.get(x, y), t.image.get(x, y));
                for c in 0..3 {
                    total += (r[c] - g[c]) * (r[c] - g[c]) * w;
                }
            }
        }
    }
    Ok(total)
}

/// Loss and its gradient with respect to every primitive's parameters.
pub fn gradients(
    scene: &GaussianScene,
    targets: &[Target],
) -> Result<(f64, Vec<PrimitiveGrad>), OptimError> {
    let mut grads = alloc::vec![PrimitiveGrad::default(); scene.len()];
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        t.check(i)?;
        let weight = per_pixel_weight(t, targets.len());
        if weight == 0.0 {
            continue;
        }
        let (l, g) = render_backward(scene, &t.view, &MaskedMse { target: t, weight });
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Copy, Default)]
struct Moments {
    m: [f64; 14],
    v: [f64; 14],
}

fn flatten(g: &PrimitiveGrad) -> [f64; 14] {
    [
        g.mean.x,
        g.mean.y,
        g.mean.z,
        g.rotation[0],
        g.rotation[1],
        g.rotation[2],
        g.rotation[3],
        g.log_scale.x,
        g.log_scale.y,
        g.log_scale.z,
        g.opacity_logit,
        g.color.x,
        g.color.y,
        g.color.z,
    ]
}

/// Outcome of [`optimize`]: the fitted scene and the loss before each step.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub scene: GaussianScene,
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Runs `config.steps` adaptive-moment steps on the photometric loss.
/// Rotations are re-normalized, log-scales and colors clamped to their valid
/// ranges after every step. Returns the lowest-loss iterate, so the returned
/// loss never exceeds the starting loss.
pub fn optimize(
    scene: &GaussianScene,
    targets: &[Target],
    config: &OptimizerConfig,
) -> Result<FitResult, OptimError> {
    config.validate()?;
    let mut scene = scene.clone();
    let mut moments = alloc::vec![Moments::default(); scene.len()];
    let mut losses = Vec::with_capacity(config.steps);
    let lr = |i: usize| match i {
        0..=2 => config.lr_mean,
        3..=6 => config.lr_rotation,
        7..=9 => config.lr_log_scale,
        10 => config.lr_opacity,
        _ => config.lr_color,
    };
    let (ls_min, ls_max) = (ln(MIN_SCALE) + 1e-6, ln(MAX_SCALE) - 1e-6);
    let frozen: Vec<bool> = scene
        .provenance()
        .iter()
        .map(|t| config.frozen.contains(t))
        .collect();

    let mut best: Option<(f64, GaussianScene)> = None;
    for step in 0..config.steps {
        let (loss, grads) = gradients(&scene, targets)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteLoss {
                step,
                last_finite: Box::new(scene),
            });
        }
        losses.push(loss);
        if best.as_ref().is_none_or(|(b, _)| loss < *b) {
            best = Some((loss, scene.clone()));
        }
        let t = (step + 1) as i32;
        let bc1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
        let bc2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
        for ((p, g), (mom, is_frozen)) in scene
            .primitives_mut()
            .iter_mut()
            .zip(&grads)
            .zip(moments.iter_mut().zip(&frozen))
        {
            if *is_frozen {
                continue;
            }
            let g = flatten(g);
            let mut delta = [0.0; 14];
            for i in 0..14 {
                mom.m[i] = ADAM_BETA1 * mom.m[i] + (1.0 - ADAM_BETA1) * g[i];
                mom.v[i] = ADAM_BETA2 * mom.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let mh = mom.m[i] / bc1;
                let vh = mom.v[i] / bc2;
                delta[i] = -lr(i) * mh / (sqrt(vh) + ADAM_EPS);
            }
            if delta.iter().all(|d| *d == 0.0) {
                continue;
            }
            p.mean += Vector3::new(delta[0], delta[1], delta[2]);
            let q = p.rotation.to_array();
            p.rotation = UnitQuaternion::new_normalize(
                q[0] + delta[3],
                q[1] + delta[4],
                q[2] + delta[5],
                q[3] + delta[6],
            );
            for i in 0..3 {
                p.log_scale[i] = clamp(p.log_scale[i] + delta[7 + i], ls_min, ls_max);
                p.color[i] = clamp(p.color[i] + delta[11 + i], 0.0, 1.0);
            }
            p.opacity_logit = clamp(
                p.opacity_logit + delta[10],
                -OPACITY_LOGIT_LIMIT,
                OPACITY_LOGIT_LIMIT,
            );
        }
    }
    let last_loss = photometric_loss(&scene, targets)?;
    if !last_loss.is_finite() {
        return Err(OptimError::NonFiniteLoss {
            step: config.steps,
            last_finite: Box::new(best.map_or(scene, |b| b.1)),
        });
    }
    let (final_loss, scene) = match best {
        Some((b, s)) if b < last_loss => (b, s),
        _ => (last_loss, scene),
    };
    Ok(FitResult {
        scene,
        losses,
        final_loss,
    })
}
