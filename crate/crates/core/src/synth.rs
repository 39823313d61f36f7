//! Seeded synthetic scenes with a view pair that shares no visible
//! primitive, plus exact (optionally noisy) pairwise pointmaps.
//!
//! View ids are fixed: 0 is the first input view, 1 an intermediate view
//! halfway between them, 2 the second input view. Pointmaps are emitted for
//! the ordered pairs (0,1), (1,0), (1,2), (2,1).

use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::align::PairPointmap;
use crate::gaussian::{GaussianPrimitive, GaussianScene, Provenance};
use crate::image::{Plane, RgbImage};
use crate::math::{cos, ln, logit, sin, tan};
use crate::pose::{project, CameraView, Intrinsics, UnitQuaternion};
use crate::raster::{render, render_surface};
use crate::seed::stream_rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(&'static str),
    #[error("a {0}° separation leaves primitives visible in both input views")]
    CannotSeparate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureStyle {
    Flat,
    Checker,
    Gradient,
}

impl TextureStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Flat => "flat",
            Self::Checker => "checker",
            Self::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Flat, Self::Checker, Self::Gradient].into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneLayout {
    /// Textured walls, floor, and ceiling of a box around the cameras.
    Room,
    /// One compact blob in front of each input camera and nothing else.
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub layout: SceneLayout,
    pub texture: TextureStyle,
    /// Room size along x, y, z.
    pub extent: Vector3<f64>,
    pub primitive_count: usize,
    /// Yaw between the two input cameras, in degrees.
    pub separation_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, in degrees.
    pub fov_deg: f64,
    /// Pointmap noise standard deviation as a fraction of the scene scale.
    pub pointmap_noise: f64,
    /// Give every pair except the gauge pair a random scale.
    pub random_pair_scales: bool,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: SceneLayout::Room,
            texture: TextureStyle::Checker,
            extent: Vector3::new(4.0, 3.0, 4.0),
            primitive_count: 6000,
            separation_deg: 120.0,
            width: 64,
            height: 64,
            fov_deg: 70.0,
            pointmap_noise: 0.0,
            random_pair_scales: true,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !self.extent.iter().all(|e| e.is_finite() && *e > 0.0) {
            return Err(SynthError::InvalidSpec("extent must be positive"));
        }
        if self.primitive_count == 0 {
            return Err(SynthError::InvalidSpec("primitive count must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("image size must be positive"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 170.0) {
            return Err(SynthError::InvalidSpec("field of view must lie in (0, 170)"));
        }
        if !(self.separation_deg.is_finite() && self.separation_deg >= 0.0 && self.separation_deg <= 360.0) {
            return Err(SynthError::InvalidSpec("separation must lie in [0, 360]"));
        }
        if !(self.pointmap_noise >= 0.0 && self.pointmap_noise.is_finite()) {
            return Err(SynthError::InvalidSpec("pointmap noise must be non-negative"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = self.width as f64 / 2.0 / tan(self.fov_deg * PI / 360.0);
        Intrinsics {
            fx: f,
            fy: f,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    /// Bounding-box diagonal of the room.
    pub fn scene_scale(&self) -> f64 {
        self.extent.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub ground_truth: GaussianScene,
    /// Cameras for view ids 0, 1, 2.
    pub views: [CameraView; 3],
    /// Input views 0 and 2 with their renders.
    pub disjoint_pair: [(CameraView, RgbImage); 2],
    pub pair_pointmaps: Vec<PairPointmap>,
    pub pair_scales: [((u32, u32), f64); 4],
    pub scene_scale: f64,
}

pub const PAIRS: [(u32, u32); 4] = [(0, 1), (1, 0), (1, 2), (2, 1)];

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.35, 0.25],
    [0.25, 0.55, 0.85],
    [0.35, 0.75, 0.35],
    [0.90, 0.80, 0.30],
    [0.65, 0.40, 0.75],
    [0.30, 0.75, 0.75],
];

fn yaw_dir(yaw: f64) -> Vector3<f64> {
    Vector3::new(sin(yaw), 0.0, cos(yaw))
}

/// The three cameras: input A at `-sep/2`, input B at `+sep/2`, and the
/// intermediate view at yaw 0, with a small sideways baseline.
pub fn cameras(spec: &SyntheticSceneSpec) -> Result<[CameraView; 3], SynthError> {
    let half = spec.separation_deg * PI / 360.0;
    let intr = spec.intrinsics();
    let base = 0.05 * spec.extent.x;
    let down = Vector3::y();
    let make = |center: Vector3<f64>, yaw: f64| {
        CameraView::looking(center, yaw_dir(yaw), down, intr).map_err(|_| SynthError::InvalidSpec("camera"))
    };
    let ca = Vector3::new(-base, 0.02 * spec.extent.y, -base);
    let cb = Vector3::new(base, -0.02 * spec.extent.y, -base);
    Ok([make(ca, -half)?, make((ca + cb) / 2.0, 0.0)?, make(cb, half)?])
}

struct Face {
    center: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    size: Vector2<f64>,
}

fn room_faces(e: &Vector3<f64>) -> [Face; 6] {
    let h = e / 2.0;
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let f = |center: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, su: f64, sv: f64| Face {
        center,
        u,
        v,
        size: Vector2::new(su, sv),
    };
    [
        f(z * h.z, x, y, e.x, e.y),
        f(-z * h.z, x, y, e.x, e.y),
        f(x * h.x, z, y, e.z, e.y),
        f(-x * h.x, z, y, e.z, e.y),
        f(y * h.y, x, z, e.x, e.z),
        f(-y * h.y, x, z, e.x, e.z),
    ]
}

fn texture(style: TextureStyle, base: [f64; 3], a: f64, b: f64, fu: f64, fv: f64) -> Vector3<f64> {
    let k = match style {
        TextureStyle::Flat => 1.0,
        TextureStyle::Checker => {
            let cell = 0.5;
            let parity = (crate::math::floor(a / cell) + crate::math::floor(b / cell)) as i64;
            if parity.rem_euclid(2) == 0 {
                1.0
            } else {
                0.35
            }
        }
        TextureStyle::Gradient => 0.3 + 0.7 * (0.5 * fu + 0.5 * fv),
    };
    Vector3::from(base.map(|c| c * k))
}

fn room(spec: &SyntheticSceneSpec, rng: &mut impl Rng) -> Vec<GaussianPrimitive> {
    let faces = room_faces(&spec.extent);
    let area: f64 = faces.iter().map(|f| f.size.x * f.size.y).sum();
    let spacing = crate::math::sqrt(area / spec.primitive_count as f64);
    let mut out = Vec::with_capacity(spec.primitive_count);
    for (k, face) in faces.iter().enumerate() {
        let nu = crate::math::ceil(face.size.x / spacing).max(1.0) as usize;
        let nv = crate::math::ceil(face.size.y / spacing).max(1.0) as usize;
        let (du, dv) = (face.size.x / nu as f64, face.size.y / nv as f64);
        let n = face.u.cross(&face.v);
        let rot = UnitQuaternion::from_rotation_matrix(&Matrix3::from_columns(&[face.u, face.v, n]));
        for j in 0..nv {
            for i in 0..nu {
                let a = (i as f64 + 0.5) * du - face.size.x / 2.0 + rng.random_range(-0.1..0.1) * du;
                let b = (j as f64 + 0.5) * dv - face.size.y / 2.0 + rng.random_range(-0.1..0.1) * dv;
                let fu = (a / face.size.x + 0.5).clamp(0.0, 1.0);
                let fv = (b / face.size.y + 0.5).clamp(0.0, 1.0);
                let mut color = texture(spec.texture, PALETTE[k], a, b, fu, fv);
                color = color.map(|c| (c + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0));
                out.push(GaussianPrimitive {
                    mean: face.center + face.u * a + face.v * b,
                    rotation: rot,
                    log_scale: Vector3::new(ln(0.6 * du), ln(0.6 * dv), ln(0.02 * du.min(dv))),
                    opacity_logit: logit(0.95),
                    color,
                });
            }
        }
    }
    out
}

fn clusters(spec: &SyntheticSceneSpec, cams: &[CameraView; 3], rng: &mut impl Rng) -> Vec<GaussianPrimitive> {
    let dist = 0.3 * spec.extent.z.min(spec.extent.x);
    let radius = 0.1 * dist;
    let per = spec.primitive_count.div_ceil(2);
    let mut out = Vec::with_capacity(2 * per);
    for (k, cam) in [cams[0], cams[2]].iter().enumerate() {
        let center = cam.center() + cam.forward() * dist;
        for _ in 0..per {
            if out.len() == spec.primitive_count {
                break;
            }
            let offset = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * radius;
            let base = PALETTE[k * 3];
            let fu = (offset.x / radius + 1.0) / 2.0;
            let fv = (offset.y / radius + 1.0) / 2.0;
            out.push(GaussianPrimitive::isotropic(
                center + offset,
                radius * 0.25,
                0.9,
                texture(spec.texture, base, offset.x * 8.0, offset.y * 8.0, fu, fv),
            ));
        }
    }
    out
}

/// True when no primitive mean lies inside both frusta while being
/// unoccluded in both views. A mean is unoccluded when its depth does not
/// exceed the rendered surface depth at its pixel by more than
/// `1e-3 × scene_scale`.
pub fn verify_disjoint(scene: &GaussianScene, a: &CameraView, b: &CameraView) -> bool {
    if scene.is_empty() {
        return true;
    }
    let tol = 1e-3 * crate::align::scene_scale(scene.primitives().iter().map(|p| p.mean));
    let visible = |view: &CameraView| -> Vec<bool> {
        let surface = render_surface(scene, view);
        let (w, h) = (view.width() as f64, view.height() as f64);
        scene
            .primitives()
            .iter()
            .map(|p| {
                let Ok((px, z)) = project(&p.mean, view) else { return false };
                let (x, y) = (crate::math::round(px.x), crate::math::round(px.y));
                if !(x >= 0.0 && y >= 0.0 && x < w && y < h) {
                    return false;
                }
                match surface.get(x as usize, y as usize) {
                    Some(s) => z <= s + tol,
                    None => true,
                }
            })
            .collect()
    };
    let (va, vb) = (visible(a), visible(b));
    !va.iter().zip(&vb).any(|(x, y)| *x && *y)
}

/// Camera-frame surface points and confidences for one view.
fn surface_points(scene: &GaussianScene, view: &CameraView) -> (Plane<Option<Vector3<f64>>>, Plane<f64>) {
    let surface = render_surface(scene, view);
    let k = view.intrinsics;
    let (w, h) = (k.width, k.height);
    let norm = (w as f64 / 2.0) * (w as f64 / 2.0) + (h as f64 / 2.0) * (h as f64 / 2.0);
    let points = Plane::from_fn(w, h, |x, y| {
        surface.get(x, y).map(|z| {
            Vector3::new(z * (x as f64 - k.cx) / k.fx, z * (y as f64 - k.cy) / k.fy, z)
        })
    });
    let conf = Plane::from_fn(w, h, |x, y| {
        if surface.get(x, y).is_none() {
            return 0.0;
        }
        let (dx, dy) = (x as f64 - k.cx, y as f64 - k.cy);
        1.0 + 4.0 * (1.0 - (dx * dx + dy * dy) / norm).max(0.0)
    });
    (points, conf)
}

pub fn generate(spec: &SyntheticSceneSpec) -> Result<SyntheticBundle, SynthError> {
    spec.validate()?;
    let views = cameras(spec)?;
    let mut rng = stream_rng(spec.seed, "synth/scene");
    let prims = match spec.layout {
        SceneLayout::Room => room(spec, &mut rng),
        SceneLayout::Clusters => clusters(spec, &views, &mut rng),
    };
    let ground_truth = GaussianScene::with_tag(prims, Provenance::Coarse);
    if !verify_disjoint(&ground_truth, &views[0], &views[2]) {
        return Err(SynthError::CannotSeparate(spec.separation_deg));
    }

    let renders: Vec<RgbImage> = views.iter().map(|v| render(&ground_truth, v).rgb).collect();
    let surfaces: Vec<_> = views.iter().map(|v| surface_points(&ground_truth, v)).collect();
    let scene_scale = spec.scene_scale();

    let mut rng = stream_rng(spec.seed, "synth/pointmaps");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pair_scales = [((0, 0), 1.0); 4];
    let mut pair_pointmaps = Vec::with_capacity(4);
    for (e, &(i, j)) in PAIRS.iter().enumerate() {
        let scale = if e == 0 || !spec.random_pair_scales {
            1.0
        } else {
            rng.random_range(0.6..1.6)
        };
        pair_scales[e] = ((i, j), scale);
        let frame = &views[i as usize];
        let mut side = |v: u32| {
            let (pts, conf) = &surfaces[v as usize];
            let view = &views[v as usize];
            let sigma = spec.pointmap_noise * scene_scale / scale;
            let pm = pts.map(|p| match p {
                Some(p) => {
                    let x = frame.world_to_camera(&view.camera_to_world(p)) / scale;
                    if sigma > 0.0 {
                        [0, 1, 2].map(|c| x[c] + sigma * noise.sample(&mut rng))
                    } else {
                        [x.x, x.y, x.z]
                    }
                }
                None => [0.0; 3],
            });
            (pm, conf.clone(), renders[v as usize].clone())
        };
        let (pointmap_i, confidence_i, colors_i) = side(i);
        let (pointmap_j, confidence_j, colors_j) = side(j);
        pair_pointmaps.push(PairPointmap {
            view_i: i,
            view_j: j,
            pointmap_i,
            confidence_i,
            colors_i,
            pointmap_j,
            confidence_j,
            colors_j,
        });
    }
    Ok(SyntheticBundle {
        disjoint_pair: [(views[0], renders[0].clone()), (views[2], renders[2].clone())],
        ground_truth,
        views,
        pair_pointmaps,
        pair_scales,
        scene_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            primitive_count: 1500,
            width: 32,
            height: 32,
            ..Default::default()
        }
    }

    #[test]
    fn default_spec_is_disjoint_and_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert!(verify_disjoint(&a.ground_truth, &a.views[0], &a.views[2]));
        assert_eq!(a.pair_pointmaps.len(), 4);
    }

    #[test]
    fn narrow_separation_is_refused() {
        let spec = SyntheticSceneSpec { separation_deg: 30.0, ..small() };
        assert!(matches!(generate(&spec), Err(SynthError::CannotSeparate(_))));
        let views = cameras(&spec).unwrap();
        let scene = GaussianScene::with_tag(room(&spec, &mut stream_rng(0, "t")), Provenance::Coarse);
        assert!(!verify_disjoint(&scene, &views[0], &views[2]));
    }

    #[test]
    fn opposite_cameras_over_clusters_are_disjoint() {
        let spec = SyntheticSceneSpec {
            layout: SceneLayout::Clusters,
            separation_deg: 180.0,
            primitive_count: 200,
            ..small()
        };
        let b = generate(&spec).unwrap();
        assert!(verify_disjoint(&b.ground_truth, &b.views[0], &b.views[2]));
    }

    #[test]
    fn identical_views_overlap() {
        let b = generate(&small()).unwrap();
        assert!(!verify_disjoint(&b.ground_truth, &b.views[0], &b.views[0]));
    }

    #[test]
    fn one_shared_primitive_breaks_disjointness() {
        let spec = SyntheticSceneSpec {
            layout: SceneLayout::Clusters,
            separation_deg: 180.0,
            primitive_count: 200,
            ..small()
        };
        let b = generate(&spec).unwrap();
        // Two back-to-back cameras see a primitive placed between them only if
        // it is in front of both, so turn camera B to face the same point.
        let mut scene = b.ground_truth.clone();
        let target = b.views[0].center() + b.views[0].forward() * 0.2 + Vector3::new(0.0, 0.0, 0.0);
        scene.push(GaussianPrimitive::isotropic(target, 0.02, 0.99, Vector3::repeat(0.5)), Provenance::Coarse);
        let side = CameraView::looking(
            target - Vector3::new(0.3, 0.0, 0.0),
            Vector3::x(),
            Vector3::y(),
            b.views[0].intrinsics,
        )
        .unwrap();
        assert!(!verify_disjoint(&scene, &b.views[0], &side));
    }

    #[test]
    fn exact_pointmaps_lie_on_pixel_rays() {
        let spec = SyntheticSceneSpec { random_pair_scales: false, ..small() };
        let b = generate(&spec).unwrap();
        for pm in &b.pair_pointmaps {
            let frame = &b.views[pm.view_i as usize];
            for (second, view) in [(false, pm.view_i), (true, pm.view_j)] {
                let view = &b.views[view as usize];
                let (pts, conf) = if second { (&pm.pointmap_j, &pm.confidence_j) } else { (&pm.pointmap_i, &pm.confidence_i) };
                let (w, h) = pts.dims();
                for y in 0..h {
                    for x in 0..w {
                        if *conf.get(x, y) == 0.0 {
                            continue;
                        }
                        let world = frame.camera_to_world(&Vector3::from(*pts.get(x, y)));
                        let (px, _) = project(&world, view).unwrap();
                        assert!((px - Vector2::new(x as f64, y as f64)).norm() < 1e-6);
                        // The densest point of a flattened primitive along an
                        // oblique ray sits within a small fraction of its
                        // thickness of the wall plane.
                        let on_wall = (0..3).any(|c| (world[c].abs() - spec.extent[c] / 2.0).abs() < 1e-3);
                        assert!(on_wall, "{world:?} is not on a wall");
                    }
                }
            }
        }
    }
}
