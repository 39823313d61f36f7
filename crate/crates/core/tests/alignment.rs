use std::time::Instant;

use glados_core::align::{global_align, scaffold_from_alignment, AlignConfig, AlignError, PairPointmap, RigidPose, ScaffoldConfig};
use glados_core::pose::{CameraView, UnitQuaternion};
use glados_core::synth::{generate, SyntheticBundle, SyntheticSceneSpec};
use nalgebra::Vector3;

fn bundle(noise: f64, random_scales: bool) -> SyntheticBundle {
    generate(&SyntheticSceneSpec {
        seed: 3,
        pointmap_noise: noise,
        random_pair_scales: random_scales,
        ..Default::default()
    })
    .unwrap()
}

/// Camera-to-world pose of `view` in the frame of `gauge`'s camera.
fn truth(gauge: &CameraView, view: &CameraView) -> RigidPose {
    let r = gauge.rotation.mul(&view.rotation.inverse());
    RigidPose {
        rotation: r,
        translation: gauge.translation - r.rotate(&view.translation),
    }
}

fn check_poses(b: &SyntheticBundle, pairs: &[PairPointmap], rot_tol_deg: f64, trans_tol: f64) {
    let start = Instant::now();
    let res = global_align(pairs, &AlignConfig::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0);
    for (v, view) in b.views.iter().enumerate() {
        let want = truth(&b.views[0], view);
        let got = res.poses[&(v as u32)];
        let angle = got.rotation.angle_to(&want.rotation).to_degrees();
        let dt = (got.translation - want.translation).norm();
        assert!(angle <= rot_tol_deg, "view {v}: rotation off by {angle}°");
        assert!(dt <= trans_tol, "view {v}: translation off by {dt}");
    }
    assert!(res.residual_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn exact_pointmaps_recover_generator_poses() {
    let b = bundle(0.0, true);
    check_poses(&b, &b.pair_pointmaps, 1e-6_f64.to_degrees(), 1e-6);
    let res = global_align(&b.pair_pointmaps, &AlignConfig::default()).unwrap();
    for (pair, scale) in b.pair_scales {
        assert!((res.pair_scales[&pair] - scale).abs() < 1e-6 * scale, "pair {pair:?}");
    }
    assert!(res.residual < 1e-9);
}

#[test]
fn noisy_pointmaps_within_tolerance() {
    let b = bundle(0.01, true);
    check_poses(&b, &b.pair_pointmaps, 2.0, 0.05 * b.scene_scale);
}

#[test]
fn zero_confidence_outliers_are_ignored() {
    let b = bundle(0.01, true);
    let mut pairs = b.pair_pointmaps.clone();
    for pm in &mut pairs {
        for y in 10..30 {
            for x in 20..40 {
                pm.pointmap_j.set(x, y, [1e4, -3e3, 7e3]);
                pm.confidence_j.set(x, y, 0.0);
            }
        }
    }
    check_poses(&b, &pairs, 2.0, 0.05 * b.scene_scale);
}

fn transform_pairs(pairs: &[PairPointmap], q: &UnitQuaternion, c: &Vector3<f64>) -> Vec<PairPointmap> {
    let f = |p: &[f64; 3]| {
        let v = q.rotate(&Vector3::from(*p)) + c;
        [v.x, v.y, v.z]
    };
    pairs
        .iter()
        .map(|pm| PairPointmap {
            pointmap_i: pm.pointmap_i.map(f),
            pointmap_j: pm.pointmap_j.map(f),
            ..pm.clone()
        })
        .collect()
}

fn compose(a: &RigidPose, b: &RigidPose) -> RigidPose {
    RigidPose {
        rotation: a.rotation.mul(&b.rotation),
        translation: a.rotation.rotate(&b.translation) + a.translation,
    }
}

fn inverse(a: &RigidPose) -> RigidPose {
    let r = a.rotation.inverse();
    RigidPose {
        rotation: r,
        translation: -r.rotate(&a.translation),
    }
}

/// Relative poses after pre-transforming every pair frame by `g` must equal
/// the original relative poses conjugated by `g`, and fused points must move
/// by `g`.
fn assert_equivariant(pairs: &[PairPointmap], q: UnitQuaternion, c: Vector3<f64>) {
    let cfg = AlignConfig::default();
    let before = global_align(pairs, &cfg).unwrap();
    let after = global_align(&transform_pairs(pairs, &q, &c), &cfg).unwrap();
    let g = RigidPose { rotation: q, translation: c };
    for a in before.poses.keys() {
        for b in before.poses.keys() {
            let rel = compose(&inverse(&before.poses[a]), &before.poses[b]);
            let want = compose(&compose(&g, &rel), &inverse(&g));
            let got = compose(&inverse(&after.poses[a]), &after.poses[b]);
            assert!(got.rotation.angle_to(&want.rotation) < 1e-6, "rotation {a}->{b}");
            assert!((got.translation - want.translation).norm() < 1e-6, "translation {a}->{b}");
        }
    }
    assert_eq!(before.fused_points.len(), after.fused_points.len());
    for (p, p2) in before.fused_points.iter().zip(&after.fused_points) {
        assert!((q.rotate(&p.position) + c - p2.position).norm() < 1e-6);
    }
}

#[test]
fn gauge_invariance_rigid_exact() {
    let b = bundle(0.0, false);
    let q = UnitQuaternion::from_axis_angle(&Vector3::new(0.3, -1.0, 0.5).normalize(), 0.8);
    assert_equivariant(&b.pair_pointmaps, q, Vector3::new(0.4, -0.2, 1.1));
}

#[test]
fn gauge_invariance_rotation_noisy() {
    let b = bundle(0.01, true);
    let q = UnitQuaternion::from_axis_angle(&Vector3::new(-0.2, 0.9, 0.1).normalize(), 1.3);
    assert_equivariant(&b.pair_pointmaps, q, Vector3::zeros());
}

#[test]
fn single_identical_pair_is_identity() {
    let b = bundle(0.0, false);
    let pm = &b.pair_pointmaps[0];
    let pair = PairPointmap {
        pointmap_j: pm.pointmap_i.clone(),
        confidence_j: pm.confidence_i.clone(),
        colors_j: pm.colors_i.clone(),
        ..pm.clone()
    };
    let res = global_align(&[pair], &AlignConfig::default()).unwrap();
    assert_eq!(res.poses.len(), 1);
    assert_eq!(res.poses[&0], RigidPose::IDENTITY);
    assert_eq!(res.pair_scales[&(0, 1)], 1.0);
    assert!(res.residual < 1e-12);
    let scene = scaffold_from_alignment(&res, &ScaffoldConfig::default()).unwrap();
    assert_eq!(scene.len(), res.fused_points.len());
}

#[test]
fn disconnected_pairs_are_rejected() {
    let b = bundle(0.0, false);
    let mut pairs = b.pair_pointmaps[..2].to_vec();
    for pm in &b.pair_pointmaps[..2] {
        pairs.push(PairPointmap {
            view_i: pm.view_i + 5,
            view_j: pm.view_j + 5,
            ..pm.clone()
        });
    }
    assert_eq!(global_align(&pairs, &AlignConfig::default()), Err(AlignError::DisconnectedGraph));
}
