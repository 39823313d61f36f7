//! Rotations, pinhole cameras, and interpolated evaluation trajectories.
//!
//! Camera convention: world→camera, `x_cam = R·x_world + t`, with +z forward,
//! +x right and +y down.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::math::{abs, acos, cos, sin, sqrt};

/// Depth at or below which a point counts as behind the camera.
pub const BEHIND_CAMERA_EPS: f64 = 1e-6;

/// Dot-product magnitude above which SLERP degrades to normalized lerp.
const NLERP_THRESHOLD: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PoseError {
    #[error("camera intrinsics or image size differ between views")]
    MismatchedIntrinsics,
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("trajectory needs at least one pose")]
    EmptyTrajectory,
}

/// Unit quaternion `(w, x, y, z)` stored in canonical sign (first non-zero
/// component of `w, x, y, z` positive) so that `q` and `-q` compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes. A zero (or non-finite) input yields the
    /// identity.
    pub fn new_normalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = sqrt(w * w + x * x + y * y + z * z);
        if !(n > 0.0) || !n.is_finite() {
            return Self::IDENTITY;
        }
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        let flip = [w, x, y, z]
            .into_iter()
            .find(|c| *c != 0.0)
            .is_some_and(|c| c < 0.0);
        if flip {
            Self {
                w: -w,
                x: -x,
                y: -y,
                z: -z,
            }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn from_array(q: [f64; 4]) -> Self {
        Self::new_normalize(q[0], q[1], q[2], q[3])
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (sin(0.5 * angle), cos(0.5 * angle));
        Self::new_normalize(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map of a rotation vector.
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let tr = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if tr > 0.0 {
            let s = 2.0 * sqrt(tr + 1.0);
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = 2.0 * sqrt(1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]);
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = 2.0 * sqrt(1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]);
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = 2.0 * sqrt(1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]);
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Self::new_normalize(w, x, y, z)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.dot(self))
    }

    pub fn dot(&self, o: &Self) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn inverse(&self) -> Self {
        Self::new_normalize(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self ⊗ rhs` (apply `rhs` first).
    pub fn mul(&self, rhs: &Self) -> Self {
        let [w, x, y, z] = hamilton(self.to_array(), rhs.to_array());
        Self::new_normalize(w, x, y, z)
    }

    /// Rotation angle in `[0, π]` taking `self` to `other`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let d = abs(self.dot(other)).min(1.0);
        2.0 * acos(d)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix([self.w, self.x, self.y, self.z])
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix() * v
    }
}

fn hamilton(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotation matrix of a quaternion assumed unit-norm.
pub(crate) fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Spherical linear interpolation along the shorter arc at constant angular
/// speed.
///
/// When the relative rotation is exactly a half turn both arcs have equal
/// length; the sign of `q1` is then chosen so that the relative rotation axis
/// has its first non-zero component positive.
pub fn slerp(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> UnitQuaternion {
    let a = q0.to_array();
    let mut b = q1.to_array();
    let mut d = q0.dot(q1);
    if d < 0.0 {
        b = b.map(|c| -c);
        d = -d;
    }
    if d > NLERP_THRESHOLD {
        let r: [f64; 4] = core::array::from_fn(|i| a[i] + t * (b[i] - a[i]));
        return UnitQuaternion::from_array(r);
    }
    if d < 1e-12 {
        // Half-turn: r = conj(q0) ⊗ q1 is a pure quaternion (0, axis).
        let conj = [a[0], -a[1], -a[2], -a[3]];
        let r = hamilton(conj, b);
        let axis_sign = r[1..]
            .iter()
            .find(|c| abs(**c) > 1e-12)
            .map_or(1.0, |c| c.signum());
        if axis_sign < 0.0 {
            b = b.map(|c| -c);
        }
        d = 0.0;
    }
    let theta = acos(d);
    let s = sin(theta);
    let wa = sin((1.0 - t) * theta) / s;
    let wb = sin(t * theta) / s;
    let r: [f64; 4] = core::array::from_fn(|i| wa * a[i] + wb * b[i]);
    UnitQuaternion::from_array(r)
}

/// Pinhole intrinsics plus image size in pixels. Pixel `(u, v)` samples the
/// image plane at integer coordinates `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(PoseError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(PoseError::InvalidIntrinsics("cx outside (0, width)"));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(PoseError::InvalidIntrinsics("cy outside (0, height)"));
        }
        Ok(())
    }

    /// Same field of view at a different image size. Pixel centers sit at
    /// integer coordinates, so the principal point maps through
    /// `c' = (c + 0.5)·s - 0.5`, which keeps box-filter downsampling aligned.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    /// World→camera rotation.
    pub rotation: UnitQuaternion,
    /// World→camera translation.
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraView {
    pub fn new(
        rotation: UnitQuaternion,
        translation: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, PoseError> {
        intrinsics.validate()?;
        Ok(Self {
            rotation,
            translation,
            intrinsics,
        })
    }

    /// Camera at `center` looking along `forward`, with `down` giving the
    /// image +y direction (it is re-orthogonalized against `forward`).
    pub fn looking(
        center: Vector3<f64>,
        forward: Vector3<f64>,
        down: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, PoseError> {
        let f = forward.normalize();
        let d = (down - f * down.dot(&f)).normalize();
        let r = d.cross(&f);
        let m = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&m);
        let translation = -(rotation.to_rotation_matrix() * center);
        Self::new(rotation, translation, intrinsics)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.to_rotation_matrix() * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.to_rotation_matrix().transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.camera_to_world(&Vector3::zeros())
    }

    /// Viewing direction (+z of the camera) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.to_rotation_matrix().transpose() * Vector3::z()
    }

    /// Same pose rendered at another resolution.
    pub fn resized(&self, width: usize, height: usize) -> Self {
        Self {
            intrinsics: self.intrinsics.resized(width, height),
            ..*self
        }
    }
}

/// Linear interpolation of translation, SLERP of rotation.
pub fn interpolate_pose(a: &CameraView, b: &CameraView, t: f64) -> Result<CameraView, PoseError> {
    if a.intrinsics != b.intrinsics {
        return Err(PoseError::MismatchedIntrinsics);
    }
    if t == 0.0 {
        return Ok(*a);
    }
    Ok(CameraView {
        rotation: slerp(&a.rotation, &b.rotation, t),
        translation: a.translation * (1.0 - t) + b.translation * t,
        intrinsics: a.intrinsics,
    })
}

/// `n` intermediate poses at `t_k = k / (n + 1)`, `k = 1..=n`; the two
/// endpoints are excluded.
pub fn evaluation_trajectory(
    a: &CameraView,
    b: &CameraView,
    n: usize,
) -> Result<Vec<CameraView>, PoseError> {
    if n == 0 {
        return Err(PoseError::EmptyTrajectory);
    }
    (1..=n)
        .map(|k| interpolate_pose(a, b, k as f64 / (n + 1) as f64))
        .collect()
}

/// Projects a world point; returns the pixel position and camera-space depth.
pub fn project(point: &Vector3<f64>, view: &CameraView) -> Result<(Vector2<f64>, f64), PoseError> {
    let p = view.world_to_camera(point);
    if p.z <= BEHIND_CAMERA_EPS {
        return Err(PoseError::BehindCamera { depth: p.z });
    }
    let k = &view.intrinsics;
    Ok((
        Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
        p.z,
    ))
}

/// World point seen at `pixel` with camera-space depth `depth`.
pub fn unproject(pixel: &Vector2<f64>, depth: f64, view: &CameraView) -> Vector3<f64> {
    let k = &view.intrinsics;
    let cam = Vector3::new(
        depth * (pixel.x - k.cx) / k.fx,
        depth * (pixel.y - k.cy) / k.fy,
        depth,
    );
    view.camera_to_world(&cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    use proptest::prelude::*;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 64.0,
            cy: 64.0,
            width: 128,
            height: 128,
        }
    }

    #[test]
    fn resizing_keeps_block_centers_aligned() {
        let k = Intrinsics { cx: 31.5, cy: 31.5, width: 64, height: 64, ..intr() };
        let big = k.resized(512, 512);
        assert_eq!((big.cx, big.cy, big.fx), (255.5, 255.5, 800.0));
        // The 8x8 block behind low-res pixel 0 spans high-res 0..8, centered at 3.5.
        let view = CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), k).unwrap();
        let p = Vector3::new(0.3, -0.2, 2.0);
        let (lo, _) = project(&p, &view).unwrap();
        let (hi, _) = project(&p, &view.resized(512, 512)).unwrap();
        assert!((hi - (lo * 8.0 + Vector2::repeat(3.5))).norm() < 1e-9);
    }

    fn rot_z(angle: f64) -> UnitQuaternion {
        UnitQuaternion::from_axis_angle(&Vector3::z(), angle)
    }

    fn assert_quat_eq(a: &UnitQuaternion, b: &UnitQuaternion, tol: f64) {
        assert!(a.angle_to(b) < tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn canonical_sign() {
        let q = UnitQuaternion::new_normalize(-1.0, 0.0, 0.0, 0.0);
        assert_eq!(q, UnitQuaternion::IDENTITY);
        let q = UnitQuaternion::new_normalize(0.0, -3.0, 0.0, 4.0);
        assert_eq!(q.to_array(), [0.0, 0.6, 0.0, -0.8]);
    }

    #[test]
    fn matrix_round_trip() {
        let q = UnitQuaternion::new_normalize(0.3, -0.5, 0.7, 0.1);
        let back = UnitQuaternion::from_rotation_matrix(&q.to_rotation_matrix());
        assert_quat_eq(&q, &back, 1e-7);
        let r = q.to_rotation_matrix();
        assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slerp_identity_and_endpoints() {
        let q = UnitQuaternion::new_normalize(0.2, 0.4, -0.1, 0.9);
        assert_quat_eq(&slerp(&q, &q, 0.7), &q, 1e-9);
        let q1 = rot_z(1.0);
        assert_eq!(slerp(&q, &q1, 0.0), q);
        assert_quat_eq(&slerp(&q, &q1, 1.0), &q1, 1e-9);
    }

    #[test]
    fn slerp_midpoint_about_z() {
        let mid = slerp(&UnitQuaternion::IDENTITY, &rot_z(FRAC_PI_2), 0.5);
        assert_quat_eq(&mid, &rot_z(FRAC_PI_4), 1e-12);
    }

    #[test]
    fn slerp_takes_shorter_arc() {
        // 350° about z is -10°; the midpoint must be -5°, not 175°.
        let q1 = rot_z(350f64.to_radians());
        let mid = slerp(&UnitQuaternion::IDENTITY, &q1, 0.5);
        assert_quat_eq(&mid, &rot_z(-5f64.to_radians()), 1e-9);
    }

    #[test]
    fn slerp_half_turn_is_deterministic() {
        let q1 = rot_z(PI);
        let mid = slerp(&UnitQuaternion::IDENTITY, &q1, 0.5);
        assert!((mid.angle_to(&UnitQuaternion::IDENTITY) - FRAC_PI_2).abs() < 1e-12);
        assert!((mid.angle_to(&q1) - FRAC_PI_2).abs() < 1e-12);
        assert_quat_eq(&mid, &rot_z(FRAC_PI_2), 1e-9);
    }

    #[test]
    fn project_examples() {
        let view = CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), intr()).unwrap();
        let (px, d) = project(&Vector3::new(0.0, 0.0, 3.5), &view).unwrap();
        assert_eq!((px.x, px.y, d), (64.0, 64.0, 3.5));
        let (px, d) = project(&Vector3::new(1.0, 0.0, 2.0), &view).unwrap();
        assert_eq!((px.x, px.y, d), (114.0, 64.0, 2.0));
        assert!(matches!(
            project(&Vector3::new(1.0, 0.0, 0.0), &view),
            Err(PoseError::BehindCamera { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        let mut k = intr();
        k.cx = 128.0;
        assert!(CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), k).is_err());
        let mut k = intr();
        k.fy = 0.0;
        assert!(k.validate().is_err());
    }

    #[test]
    fn interpolate_examples() {
        let a = CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), intr()).unwrap();
        let b = CameraView::new(rot_z(1.2), Vector3::new(2.0, 0.0, 0.0), intr()).unwrap();
        assert_eq!(interpolate_pose(&a, &b, 0.0).unwrap(), a);
        let mid = interpolate_pose(&a, &b, 0.5).unwrap();
        assert_eq!(mid.translation, Vector3::new(1.0, 0.0, 0.0));
        let mut k = intr();
        k.fx = 99.0;
        let c = CameraView { intrinsics: k, ..b };
        assert_eq!(
            interpolate_pose(&a, &c, 0.5),
            Err(PoseError::MismatchedIntrinsics)
        );
    }

    #[test]
    fn interpolate_quarter_angle_matches_axis_angle() {
        let a = CameraView::new(
            UnitQuaternion::new_normalize(0.9, 0.1, 0.3, -0.2),
            Vector3::zeros(),
            intr(),
        )
        .unwrap();
        let b = CameraView::new(
            UnitQuaternion::new_normalize(0.4, -0.6, 0.2, 0.5),
            Vector3::zeros(),
            intr(),
        )
        .unwrap();
        // Independent route: relative rotation matrix → angle via trace.
        let rel = a.rotation.to_rotation_matrix().transpose() * b.rotation.to_rotation_matrix();
        let total = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let q = interpolate_pose(&a, &b, 0.25).unwrap().rotation;
        let part = a.rotation.to_rotation_matrix().transpose() * q.to_rotation_matrix();
        let got = ((part.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        assert!((got - 0.25 * total).abs() < 1e-7, "{got} vs {}", 0.25 * total);
    }

    #[test]
    fn trajectory_examples() {
        let a = CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), intr()).unwrap();
        let b = CameraView::new(rot_z(0.8), Vector3::new(2.0, 0.0, 0.0), intr()).unwrap();
        let traj = evaluation_trajectory(&a, &b, 200).unwrap();
        assert_eq!(traj.len(), 200);
        assert!(traj.iter().all(|v| *v != a && *v != b));
        let one = evaluation_trajectory(&a, &b, 1).unwrap();
        assert_eq!(one[0], interpolate_pose(&a, &b, 0.5).unwrap());
        let same = evaluation_trajectory(&a, &a, 7).unwrap();
        assert!(same.iter().all(|v| *v == a));
        assert_eq!(
            evaluation_trajectory(&a, &b, 0),
            Err(PoseError::EmptyTrajectory)
        );
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::new_normalize(w, x, y, z))
    }

    proptest! {
        #[test]
        fn slerp_unit_norm_and_linear_angle(q0 in arb_quat(), q1 in arb_quat(), t in 0.0..=1.0f64) {
            let q = slerp(&q0, &q1, t);
            prop_assert!((q.norm() - 1.0).abs() < 1e-9);
            let total = q0.angle_to(&q1);
            prop_assert!((q0.angle_to(&q) - t * total).abs() < 1e-7);
        }

        #[test]
        fn unproject_then_project(u in 1.0..127.0f64, v in 1.0..127.0f64, d in 0.1..50.0f64,
                                  q in arb_quat(), tx in -3.0..3.0f64) {
            let view = CameraView::new(q, Vector3::new(tx, 0.5, -1.0), intr()).unwrap();
            let p = unproject(&Vector2::new(u, v), d, &view);
            let (px, depth) = project(&p, &view).unwrap();
            prop_assert!((px.x - u).abs() < 1e-6 && (px.y - v).abs() < 1e-6);
            prop_assert!((depth - d).abs() < 1e-9 * d.max(1.0));
        }

        #[test]
        fn trajectory_moves_monotonically(n in 1usize..60, tx in 0.1..5.0f64) {
            let a = CameraView::new(UnitQuaternion::IDENTITY, Vector3::zeros(), intr()).unwrap();
            let b = CameraView::new(rot_z(0.3), Vector3::new(tx, -tx, 0.5), intr()).unwrap();
            let traj = evaluation_trajectory(&a, &b, n).unwrap();
            let dir = b.translation - a.translation;
            let along: Vec<f64> = traj.iter().map(|v| (v.translation - a.translation).dot(&dir)).collect();
            prop_assert!(along.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(along[0] > 0.0 && *along.last().unwrap() < dir.dot(&dir));
        }
    }
}
