//! Reconstruction quality measures and the run failure rule.

use alloc::format;
use alloc::string::String;

use crate::coverage::{mean_alpha, valid_depth_mask};
use crate::gaussian::GaussianScene;
use crate::image::RgbImage;
use crate::pose::CameraView;
use crate::raster::{render, RenderOutput};

/// Scenes with fewer primitives than this count as degenerate.
pub const MIN_PRIMITIVES: usize = 100;
/// Mean trajectory alpha below this counts as a failed reconstruction.
pub const MIN_MEAN_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricError {
    /// Mean squared error over valid pixels and channels; 1.0 when no pixel is
    /// valid.
    pub value: f64,
    pub valid_pixels: usize,
    pub no_valid_pixels: bool,
}

/// Mean squared color error over pixels with `alpha ≥ 0.5`.
pub fn photometric_error_of(out: &RenderOutput, gt: &RgbImage) -> PhotometricError {
    assert!(out.rgb.same_dims(gt), "render and ground truth differ in size");
    let valid = valid_depth_mask(out);
    let mut sum = 0.0;
    let mut n = 0;
    for ((r, g), v) in out.rgb.as_slice().iter().zip(gt.as_slice()).zip(valid.as_slice()) {
        if *v {
            sum += (0..3).map(|c| (r[c] - g[c]) * (r[c] - g[c])).sum::<f64>() / 3.0;
            n += 1;
        }
    }
    if n == 0 {
        return PhotometricError {
            value: 1.0,
            valid_pixels: 0,
            no_valid_pixels: true,
        };
    }
    PhotometricError {
        value: sum / n as f64,
        valid_pixels: n,
        no_valid_pixels: false,
    }
}

pub fn photometric_error(scene: &GaussianScene, view: &CameraView, gt: &RgbImage) -> PhotometricError {
    photometric_error_of(&render(scene, view), gt)
}

/// Mean of per-view mean alpha.
pub fn trajectory_mean_alpha<'a>(renders: impl IntoIterator<Item = &'a RenderOutput>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in renders {
        sum += mean_alpha(r);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Why coarse alignment produced nothing usable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentFailure {
    DisconnectedGraph,
    EmptyAlignment,
}

/// What the failure rule needs to know about a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub alignment_failure: Option<AlignmentFailure>,
    /// Stage that aborted on a client error, if any.
    pub client_error_stage: Option<String>,
    /// The operator whose call failed.
    pub client_error_operator: Option<String>,
    pub final_primitives: Option<usize>,
    pub mean_trajectory_alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureVerdict {
    pub failed: bool,
    pub reason: Option<String>,
}

/// A run has failed if coarse alignment failed, a stage aborted on a client
/// error, the final scene has fewer than [`MIN_PRIMITIVES`] primitives, or
/// the mean trajectory alpha is below [`MIN_MEAN_ALPHA`]. The first matching
/// condition in that order is reported.
pub fn detect_failure(r: &RunRecord) -> FailureVerdict {
    let reason = if let Some(f) = r.alignment_failure {
        Some(String::from(match f {
            AlignmentFailure::DisconnectedGraph => "disconnected coarse alignment",
            AlignmentFailure::EmptyAlignment => "empty coarse alignment",
        }))
    } else if let Some(stage) = &r.client_error_stage {
        Some(match &r.client_error_operator {
            Some(op) => format!("stage {stage} aborted on a {op} client error"),
            None => format!("stage {stage} aborted on a client error"),
        })
    } else if r.final_primitives.is_none_or(|n| n < MIN_PRIMITIVES) {
        Some(String::from("degenerate scene size"))
    } else if r.mean_trajectory_alpha.is_none_or(|a| a < MIN_MEAN_ALPHA) {
        Some(format!(
            "mean trajectory alpha {:.4} below {MIN_MEAN_ALPHA}",
            r.mean_trajectory_alpha.unwrap_or(0.0)
        ))
    } else {
        None
    };
    FailureVerdict {
        failed: reason.is_some(),
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{DepthMap, Plane};

    fn out(rgb: [f64; 3], alpha: f64) -> RenderOutput {
        RenderOutput {
            rgb: RgbImage::filled(4, 4, rgb),
            depth: DepthMap::filled(4, 4, 1.0),
            alpha: Plane::filled(4, 4, alpha),
        }
    }

    #[test]
    fn photometric_examples() {
        let gt = RgbImage::filled(4, 4, [0.2, 0.4, 0.6]);
        let e = photometric_error_of(&out([0.2, 0.4, 0.6], 1.0), &gt);
        assert_eq!((e.value, e.valid_pixels), (0.0, 16));
        let e = photometric_error_of(&out([0.5, 0.4, 0.6], 1.0), &gt);
        assert!((e.value - 0.03).abs() < 1e-15);
        let e = photometric_error_of(&out([0.0; 3], 0.2), &gt);
        assert!(e.no_valid_pixels && e.value == 1.0);
    }

    fn healthy() -> RunRecord {
        RunRecord {
            final_primitives: Some(5000),
            mean_trajectory_alpha: Some(0.95),
            ..Default::default()
        }
    }

    #[test]
    fn failure_rule() {
        assert!(!detect_failure(&healthy()).failed);
        let r = RunRecord { alignment_failure: Some(AlignmentFailure::DisconnectedGraph), ..healthy() };
        assert!(detect_failure(&r).failed);
        let r = RunRecord { final_primitives: Some(99), ..healthy() };
        assert_eq!(detect_failure(&r).reason.as_deref(), Some("degenerate scene size"));
        let r = RunRecord { alignment_failure: Some(AlignmentFailure::EmptyAlignment), ..healthy() };
        assert_eq!(detect_failure(&r).reason.as_deref(), Some("empty coarse alignment"));
        let r = RunRecord { final_primitives: Some(100), ..healthy() };
        assert!(!detect_failure(&r).failed);
        let r = RunRecord { mean_trajectory_alpha: Some(0.05), ..healthy() };
        assert!(detect_failure(&r).failed);
        let r = RunRecord { client_error_stage: Some("expand".into()), ..healthy() };
        assert!(detect_failure(&r).reason.unwrap().contains("expand"));
    }
}
