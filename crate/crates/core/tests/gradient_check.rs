//! Analytic gradients against central finite differences of the loss.

mod common;

use glados_core::gaussian::{GaussianPrimitive, GaussianScene};
use glados_core::optim::{gradients, photometric_loss, Target};
use glados_core::pose::UnitQuaternion;
use glados_core::raster::PrimitiveGrad;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-6;

fn with_param(p: &GaussianPrimitive, k: usize, delta: f64) -> GaussianPrimitive {
    let mut q = *p;
    match k {
        0..=2 => q.mean[k] += delta,
        3..=6 => {
            let mut r = p.rotation.to_array();
            r[k - 3] += delta;
            q.rotation = UnitQuaternion::from_array(r);
        }
        7..=9 => q.log_scale[k - 7] += delta,
        10 => q.opacity_logit += delta,
        _ => q.color[k - 11] += delta,
    }
    q
}

fn analytic(g: &PrimitiveGrad, k: usize) -> f64 {
    match k {
        0..=2 => g.mean[k],
        3..=6 => g.rotation[k - 3],
        7..=9 => g.log_scale[k - 7],
        10 => g.opacity_logit,
        _ => g.color[k - 11],
    }
}

fn numeric(scene: &GaussianScene, targets: &[Target], i: usize, k: usize) -> f64 {
    let eval = |delta: f64| {
        let mut s = scene.clone();
        let p = s.primitives()[i];
        s.primitives_mut()[i] = with_param(&p, k, delta);
        photometric_loss(&s, targets).unwrap()
    };
    (eval(STEP) - eval(-STEP)) / (2.0 * STEP)
}

/// Worst relative error over every parameter of every primitive.
pub fn worst_relative_error(scene: &GaussianScene, targets: &[Target]) -> (f64, String) {
    let (_, grads) = gradients(scene, targets).unwrap();
    let mut worst = (0.0, String::new());
    for (i, g) in grads.iter().enumerate() {
        for k in 0..14 {
            let a = analytic(g, k);
            let n = numeric(scene, targets, i, k);
            let err = (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR);
            if err > worst.0 {
                worst = (err, format!("primitive {i} param {k}: analytic {a:e} numeric {n:e}"));
            }
        }
    }
    worst
}

#[test]
fn random_scenes_match_finite_differences() {
    for seed in 0..3u64 {
        let (w, h, f) = (32, 32, 40.0);
        let scene = common::random_scene(seed, 20, w, h, f);
        let targets = [Target::new(common::camera(w, h, f), common::random_image(seed + 100, w, h))];
        let (err, at) = worst_relative_error(&scene, &targets);
        assert!(err <= REL_TOL, "seed {seed}: {err:e} at {at}");
    }
}

#[test]
fn color_gradient_sign_follows_residual() {
    use glados_core::gaussian::Provenance;
    use glados_core::image::RgbImage;
    use nalgebra::Vector3;
    let cam = common::camera(31, 31, 40.0);
    let p = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.2, 0.8, Vector3::new(0.6, 0.3, 0.5));
    let scene = GaussianScene::with_tag(vec![p], Provenance::Coarse);
    let target = RgbImage::filled(31, 31, [0.2, 0.7, 0.5]);
    let targets = [Target::new(cam, target)];
    let (_, g) = gradients(&scene, &targets).unwrap();
    let g = g[0];
    assert!(g.color.x > 0.0, "render too red → positive gradient");
    assert!(g.color.y < 0.0, "render not green enough → negative gradient");
    // Centered symmetric splat on a constant target: no pull on x/y position.
    assert!(g.mean.x.abs() < 1e-12 && g.mean.y.abs() < 1e-12);
    for k in [11, 12] {
        let n = numeric(&scene, &targets, 0, k);
        assert!((analytic(&g, k) - n).abs() <= 1e-6 * n.abs().max(1e-6));
    }
}
