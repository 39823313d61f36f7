//! Scale-and-shift alignment of a relative depth prediction against rendered
//! depth, and lifting of masked pixels into new primitives.

use alloc::vec::Vec;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::gaussian::GaussianPrimitive;
use crate::image::{DepthMap, Mask, RgbImage};
use crate::math::{abs, sqrt};
use crate::pose::{unproject, CameraView};
use crate::raster::NEAR_PLANE;

/// Fewer valid pixels than this and the fit is refused.
pub const MIN_VALID_PIXELS: usize = 50;
/// Residuals above this multiple of the first-pass RMS are trimmed.
pub const TRIM_FACTOR: f64 = 2.0;
pub const LIFT_OPACITY: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DepthError {
    #[error("only {found} valid pixels, need {needed}")]
    InsufficientValidPixels { found: usize, needed: usize },
    #[error("depth alignment was rejected ({0:?})")]
    RejectedAlignment(AlignmentStatus),
    #[error("input planes have different dimensions")]
    DimensionMismatch,
    #[error("stride must be at least 1")]
    InvalidStride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentStatus {
    Accepted,
    /// The best fit flips or collapses depth ordering.
    NonPositiveScale,
    /// The prediction is constant over the valid pixels; only a shift was fit
    /// and the scale is fixed at 1.
    DegenerateDepth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAlignment {
    pub scale: f64,
    pub shift: f64,
    pub inlier_count: usize,
    pub rms_residual: f64,
    pub status: AlignmentStatus,
}

impl DepthAlignment {
    pub fn is_accepted(&self) -> bool {
        self.status == AlignmentStatus::Accepted
    }

    pub fn apply(&self, predicted: f64) -> f64 {
        self.scale * predicted + self.shift
    }
}

struct Fit {
    scale: f64,
    shift: f64,
    degenerate: bool,
}

fn fit(pairs: &[(f64, f64)]) -> Fit {
    let n = pairs.len() as f64;
    let (mp, mr) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (p, r)| (a + p / n, b + r / n));
    let (mut cov, mut var) = (0.0, 0.0);
    for (p, r) in pairs {
        cov += (p - mp) * (r - mr);
        var += (p - mp) * (p - mp);
    }
    let spread = pairs.iter().fold(0.0f64, |m, (p, _)| m.max(abs(*p)));
    if var <= 1e-24 * n * spread.max(1.0) * spread.max(1.0) {
        return Fit {
            scale: 1.0,
            shift: mr - mp,
            degenerate: true,
        };
    }
    let scale = cov / var;
    Fit {
        scale,
        shift: mr - scale * mp,
        degenerate: false,
    }
}

fn rms(pairs: &[(f64, f64)], f: &Fit) -> f64 {
    let ss: f64 = pairs
        .iter()
        .map(|(p, r)| {
            let e = f.scale * p + f.shift - r;
            e * e
        })
        .sum();
    sqrt(ss / pairs.len() as f64)
}

/// Least-squares `(s, t)` minimizing `Σ (s·pred + t − rendered)²` over `valid`,
/// refit once after dropping residuals above `2 × RMS`. If trimming would leave
/// fewer than [`MIN_VALID_PIXELS`] the first-pass fit is kept.
pub fn affine_align(
    predicted: &DepthMap,
    rendered: &DepthMap,
    valid: &Mask,
) -> Result<DepthAlignment, DepthError> {
    if !predicted.same_dims(rendered) || !predicted.same_dims(valid) {
        return Err(DepthError::DimensionMismatch);
    }
    let pairs: Vec<(f64, f64)> = predicted
        .as_slice()
        .iter()
        .zip(rendered.as_slice())
        .zip(valid.as_slice())
        .filter(|((p, r), v)| **v && p.is_finite() && r.is_finite())
        .map(|((p, r), _)| (*p, *r))
        .collect();
    if pairs.len() < MIN_VALID_PIXELS {
        return Err(DepthError::InsufficientValidPixels {
            found: pairs.len(),
            needed: MIN_VALID_PIXELS,
        });
    }

    let first = fit(&pairs);
    let first_rms = rms(&pairs, &first);
    let kept: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(p, r)| abs(first.scale * p + first.shift - r) <= TRIM_FACTOR * first_rms)
        .collect();
    let (f, used) = if kept.len() >= MIN_VALID_PIXELS && kept.len() < pairs.len() {
        (fit(&kept), kept)
    } else {
        (first, pairs)
    };
    let status = if f.degenerate {
        AlignmentStatus::DegenerateDepth
    } else if f.scale <= 0.0 {
        AlignmentStatus::NonPositiveScale
    } else {
        AlignmentStatus::Accepted
    };
    Ok(DepthAlignment {
        scale: f.scale,
        shift: f.shift,
        inlier_count: used.len(),
        rms_residual: rms(&used, &f),
        status,
    })
}

/// Number of `stride × stride` cells (aligned to the image origin) that
/// contain at least one masked pixel. This is how many primitives
/// [`unproject_masked`] creates when every aligned depth is usable.
pub fn stride_cell_count(mask: &Mask, stride: usize) -> usize {
    let (w, h) = mask.dims();
    let mut n = 0;
    for cy in (0..h).step_by(stride) {
        for cx in (0..w).step_by(stride) {
            let hit = (cy..(cy + stride).min(h))
                .any(|y| (cx..(cx + stride).min(w)).any(|x| *mask.get(x, y)));
            n += hit as usize;
        }
    }
    n
}

/// One isotropic primitive per `stride × stride` cell containing a masked
/// pixel, placed at the first masked pixel of the cell (row-major) at depth
/// `s·pred + t`. Its standard deviation is the footprint of one cell at that
/// depth, `d·stride/fx`. Pixels whose aligned depth is not in front of the
/// near plane are skipped.
pub fn unproject_masked(
    image: &RgbImage,
    predicted: &DepthMap,
    alignment: &DepthAlignment,
    mask: &Mask,
    view: &CameraView,
    stride: usize,
) -> Result<Vec<GaussianPrimitive>, DepthError> {
    if !alignment.is_accepted() {
        return Err(DepthError::RejectedAlignment(alignment.status));
    }
    if stride == 0 {
        return Err(DepthError::InvalidStride);
    }
    if !image.same_dims(predicted) || !image.same_dims(mask) || image.dims() != (view.width(), view.height()) {
        return Err(DepthError::DimensionMismatch);
    }
    let (w, h) = mask.dims();
    let fx = view.intrinsics.fx;
    let mut out = Vec::new();
    for cy in (0..h).step_by(stride) {
        for cx in (0..w).step_by(stride) {
            let first = (cy..(cy + stride).min(h))
                .flat_map(|y| (cx..(cx + stride).min(w)).map(move |x| (x, y)))
                .find(|&(x, y)| *mask.get(x, y));
            let Some((x, y)) = first else { continue };
            let d = alignment.apply(*predicted.get(x, y));
            if !d.is_finite() || d <= NEAR_PLANE {
                continue;
            }
            let mean = unproject(&Vector2::new(x as f64, y as f64), d, view);
            let c = image.get(x, y);
            out.push(GaussianPrimitive::isotropic(
                mean,
                d * stride as f64 / fx,
                LIFT_OPACITY,
                Vector3::new(c[0], c[1], c[2]),
            ));
        }
    }
    Ok(out)
}
