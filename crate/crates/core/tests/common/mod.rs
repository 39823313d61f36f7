#![allow(dead_code)]

use glados_core::gaussian::{GaussianPrimitive, GaussianScene, Provenance};
use glados_core::image::RgbImage;
use glados_core::pose::{CameraView, Intrinsics, UnitQuaternion};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn camera(w: usize, h: usize, f: f64) -> CameraView {
    CameraView::new(
        UnitQuaternion::IDENTITY,
        Vector3::zeros(),
        Intrinsics {
            fx: f,
            fy: f,
            cx: w as f64 / 2.0 - 0.5,
            cy: h as f64 / 2.0 - 0.5,
            width: w,
            height: h,
        },
    )
    .unwrap()
}

/// Random primitives spread through the frustum of [`camera`] with focal
/// length `f` and image size `w × h`.
pub fn random_scene(seed: u64, n: usize, w: usize, h: usize, f: f64) -> GaussianScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.random_range(2.0..6.0);
        let x = rng.random_range(-0.5..0.5) * w as f64 / f * z;
        let y = rng.random_range(-0.5..0.5) * h as f64 / f * z;
        let q = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        prims.push(GaussianPrimitive {
            mean: Vector3::new(x, y, z),
            rotation: UnitQuaternion::from_array(q),
            log_scale: Vector3::new(
                rng.random_range(-3.0..-1.0),
                rng.random_range(-3.0..-1.0),
                rng.random_range(-3.0..-1.0),
            ),
            opacity_logit: rng.random_range(-2.0..2.0),
            color: Vector3::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ),
        });
    }
    GaussianScene::with_tag(prims, Provenance::Coarse)
}

pub fn random_image(seed: u64, w: usize, h: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    RgbImage::from_fn(w, h, |x, y| {
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        [
            0.5 * base[0] + 0.4 * u,
            0.5 * base[1] + 0.4 * v,
            0.5 * base[2] + 0.2 * (u + v),
        ]
    })
}
