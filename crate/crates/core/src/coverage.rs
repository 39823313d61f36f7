//! Opacity-based coverage masks.

use crate::image::Mask;
use crate::raster::RenderOutput;
use crate::DEPTH_VALID_ALPHA;

/// Pixels whose accumulated alpha is below `alpha_threshold`, and their
/// fraction of the image.
pub fn detect_holes(out: &RenderOutput, alpha_threshold: f64) -> (Mask, f64) {
    let mask = out.alpha.map(|a| *a < alpha_threshold);
    let ratio = mask.ratio();
    (mask, ratio)
}

/// Pixels whose rendered depth is trustworthy (`alpha ≥ 0.5`).
pub fn valid_depth_mask(out: &RenderOutput) -> Mask {
    Mask::from_fn(out.width(), out.height(), |x, y| {
        *out.alpha.get(x, y) >= DEPTH_VALID_ALPHA && out.depth.get(x, y).is_finite()
    })
}

pub fn mean_alpha(out: &RenderOutput) -> f64 {
    let a = out.alpha.as_slice();
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{DepthMap, Plane, RgbImage};

    fn with_alpha(alpha: Plane<f64>) -> RenderOutput {
        let (w, h) = alpha.dims();
        RenderOutput {
            rgb: RgbImage::filled(w, h, [0.0; 3]),
            depth: DepthMap::filled(w, h, 1.0),
            alpha,
        }
    }

    #[test]
    fn hole_examples() {
        let (m, r) = detect_holes(&with_alpha(Plane::filled(4, 4, 1.0)), 0.05);
        assert_eq!((m.count(), r), (0, 0.0));

        let vals = [0.0, 0.5, 1.0];
        let out = with_alpha(Plane::from_fn(3, 1, |x, _| vals[x]));
        let (m, _) = detect_holes(&out, 0.05);
        assert_eq!(m.as_slice(), &[true, false, false]);

        let out = with_alpha(Plane::from_fn(8, 6, |x, _| if x < 4 { 0.0 } else { 0.9 }));
        assert_eq!(detect_holes(&out, 0.05).1, 0.5);
        assert_eq!(valid_depth_mask(&out).count(), 24);
    }
}
