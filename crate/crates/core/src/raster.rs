//! Tile-based forward splatting with front-to-back alpha compositing.
//!
//! Each primitive is projected to a 2D Gaussian with covariance
//! `Σ′ = J W Σ Wᵀ Jᵀ + 0.3·I` and composited in order of its mean's camera
//! depth. The 2D kernel is truncated at the 3σ ellipse; subtracting the
//! second-order expansion of the Gaussian about the boundary makes its value,
//! slope, and curvature all vanish there:
//!
//! ```text
//! E    = exp(-9/2),  r = (9 - m) / 2
//! k(m) = (exp(-m/2) - E·(1 + r + r²/2)) / (1 - E·(1 + 9/2 + 81/8)),  m = dᵀ Σ′⁻¹ d < 9
//! α    = min(sigmoid(opacity_logit) · k(m), 0.999)
//! ```
//!
//! `k(0) = 1`, `k` decreases strictly on `[0, 9)`, and the loss stays twice
//! differentiable as a primitive moves across a pixel's footprint boundary.
//!
//! Tiles only decide which primitives a pixel visits; every pixel still sees
//! them in the same global order, so the output does not depend on the tile
//! decomposition or on how tiles are scheduled.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::gaussian::{GaussianPrimitive, GaussianScene};
use crate::image::{DepthMap, Plane, RgbImage};
use crate::math::{exp, sigmoid, sqrt};
use crate::par;
use crate::pose::{rotation_matrix, CameraView, Intrinsics};

pub const TILE_SIZE: usize = 8;
/// Screen-space dilation added to every projected covariance, in px².
pub const SCREEN_BLUR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.999;
/// Squared Mahalanobis radius of the footprint (3σ).
pub const FOOTPRINT_M2: f64 = 9.0;
/// Primitives whose mean lies closer than this to the camera plane are skipped.
pub const NEAR_PLANE: f64 = 0.01;
/// Primitives whose projected mean lies further outside the image than this
/// fraction of its size are skipped; their linearized footprint is unreliable.
pub const GUARD_BAND: f64 = 0.3;
const DEPTH_EPS: f64 = 1e-10;
/// Compositing stops once the remaining transmittance falls below this; the
/// skipped tail changes no output by more than this amount per unit color.
pub const MIN_TRANSMITTANCE: f64 = 1e-10;

/// Per-pixel color, expected depth, and accumulated opacity for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: RgbImage,
    /// Alpha-normalized expected depth; 0 where nothing contributes.
    pub depth: DepthMap,
    pub alpha: Plane<f64>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }
}

/// `exp(-9/2)` and the normalization that makes `k(0) = 1`.
#[inline]
fn kernel_constants() -> (f64, f64) {
    const TAIL: f64 = 0.011_108_996_538_242_306;
    const R0: f64 = 0.5 * FOOTPRINT_M2;
    const NORM: f64 = 1.0 / (1.0 - TAIL * (1.0 + R0 + 0.5 * R0 * R0));
    (TAIL, NORM)
}

/// Truncated kernel value and its derivative in `m`; `None` outside the
/// footprint.
#[inline]
pub(crate) fn kernel(m: f64) -> Option<(f64, f64)> {
    if !(m < FOOTPRINT_M2) {
        return None;
    }
    let (tail, norm) = kernel_constants();
    let g = exp(-0.5 * m);
    let r = 0.5 * (FOOTPRINT_M2 - m);
    let value = (g - tail * (1.0 + r + 0.5 * r * r)) * norm;
    let slope = (-0.5 * g + 0.5 * tail * (1.0 + r)) * norm;
    Some((value, slope))
}

/// A primitive projected into one view.
#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    pub cam: Vector3<f64>,
    pub center: Vector2<f64>,
    /// Inverse 2D covariance `[[a, b], [b, c]]` stored as `[a, b, c]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`, clipped to the image.
    pub bbox: [usize; 4],
    pub cov_cam: Matrix3<f64>,
    pub jac: Matrix2x3<f64>,
}

impl Splat {
    #[inline]
    fn mahalanobis(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let [a, b, c] = self.conic;
        (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
    }

    #[inline]
    fn covers_row(&self, y: usize) -> bool {
        y >= self.bbox[1] && y <= self.bbox[3]
    }

    #[inline]
    fn covers_column(&self, x: usize) -> bool {
        x >= self.bbox[0] && x <= self.bbox[2]
    }
}

/// Near-plane and guard-band test on a camera-space mean.
fn culled(cam: &Vector3<f64>, k: &Intrinsics) -> bool {
    if cam.z <= NEAR_PLANE {
        return true;
    }
    let u = k.fx * cam.x / cam.z + k.cx;
    let v = k.fy * cam.y / cam.z + k.cy;
    let (w, h) = (k.width as f64, k.height as f64);
    !(u >= -GUARD_BAND * w && u <= (1.0 + GUARD_BAND) * w && v >= -GUARD_BAND * h && v <= (1.0 + GUARD_BAND) * h)
}

fn project_one(index: usize, p: &GaussianPrimitive, view: &CameraView) -> Option<Splat> {
    let w = view.rotation.to_rotation_matrix();
    let cam = w * p.mean + view.translation;
    let k = &view.intrinsics;
    if culled(&cam, k) {
        return None;
    }
    let (x, y, z) = (cam.x, cam.y, cam.z);
    let jac = Matrix2x3::new(
        k.fx / z,
        0.0,
        -k.fx * x / (z * z),
        0.0,
        k.fy / z,
        -k.fy * y / (z * z),
    );
    let r = rotation_matrix(p.rotation.to_array());
    let s = p.scale();
    let m = r * Matrix3::from_diagonal(&s);
    let cov_world = m * m.transpose();
    let cov_cam = w * cov_world * w.transpose();
    let cov2 = jac * cov_cam * jac.transpose();
    let (sa, sb, sc) = (cov2[(0, 0)] + SCREEN_BLUR, cov2[(0, 1)], cov2[(1, 1)] + SCREEN_BLUR);
    let det = sa * sc - sb * sb;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [sc / det, -sb / det, sa / det];
    let center = Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
    let r3 = sqrt(FOOTPRINT_M2);
    let ex = r3 * sqrt(sa);
    let ey = r3 * sqrt(sc);
    let x0 = libm::ceil(center.x - ex);
    let x1 = libm::floor(center.x + ex);
    let y0 = libm::ceil(center.y - ey);
    let y1 = libm::floor(center.y + ey);
    let (wf, hf) = ((k.width - 1) as f64, (k.height - 1) as f64);
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= wf && y0 <= hf) {
        return None;
    }
    let bbox = [
        x0.max(0.0) as usize,
        y0.max(0.0) as usize,
        x1.min(wf) as usize,
        y1.min(hf) as usize,
    ];
    Some(Splat {
        index,
        cam,
        center,
        conic,
        opacity: sigmoid(p.opacity_logit),
        color: p.color,
        bbox,
        cov_cam,
        jac,
    })
}

/// Visible splats sorted front to back (ties broken by primitive index).
pub(crate) fn project_splats(scene: &GaussianScene, view: &CameraView) -> Vec<Splat> {
    let mut splats: Vec<Splat> = scene
        .primitives()
        .iter()
        .enumerate()
        .filter_map(|(i, p)| project_one(i, p, view))
        .collect();
    splats.sort_by(|a, b| a.cam.z.total_cmp(&b.cam.z).then(a.index.cmp(&b.index)));
    splats
}

pub(crate) struct TileGrid {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
    /// Per tile, positions into the sorted splat list (ascending).
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Inclusive-exclusive pixel ranges of tile `t`.
    pub fn bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(self.width), y0, (y0 + TILE_SIZE).min(self.height))
    }
}

pub(crate) fn bin_splats(splats: &[Splat], width: usize, height: usize) -> TileGrid {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists = alloc::vec![Vec::new(); tiles_x * tiles_y];
    for (pos, s) in splats.iter().enumerate() {
        for ty in s.bbox[1] / TILE_SIZE..=s.bbox[3] / TILE_SIZE {
            for tx in s.bbox[0] / TILE_SIZE..=s.bbox[2] / TILE_SIZE {
                lists[ty * tiles_x + tx].push(pos as u32);
            }
        }
    }
    TileGrid {
        tiles_x,
        tiles_y,
        width,
        height,
        lists,
    }
}

#[derive(Clone, Copy, Default)]
struct PixelOut {
    rgb: [f64; 3],
    depth: f64,
    alpha: f64,
}

fn render_tile(splats: &[Splat], grid: &TileGrid, t: usize) -> Vec<PixelOut> {
    let (x0, x1, y0, y1) = grid.bounds(t);
    let list = &grid.lists[t];
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
    let mut row: Vec<&Splat> = Vec::with_capacity(list.len());
    for y in y0..y1 {
        row.clear();
        row.extend(list.iter().map(|&p| &splats[p as usize]).filter(|s| s.covers_row(y)));
        for x in x0..x1 {
            let (px, py) = (x as f64, y as f64);
            let mut trans = 1.0;
            let mut rgb = [0.0; 3];
            let mut depth = 0.0;
            for s in &row {
                if !s.covers_column(x) {
                    continue;
                }
                let (m, _, _) = s.mahalanobis(px, py);
                let Some((k, _)) = kernel(m) else { continue };
                let a = (s.opacity * k).min(MAX_ALPHA);
                let wgt = a * trans;
                for c in 0..3 {
                    rgb[c] += s.color[c] * wgt;
                }
                depth += s.cam.z * wgt;
                trans *= 1.0 - a;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            let alpha = 1.0 - trans;
            out.push(PixelOut {
                rgb,
                depth: if alpha > 0.0 { depth / alpha.max(DEPTH_EPS) } else { 0.0 },
                alpha,
            });
        }
    }
    out
}

fn assemble(grid: &TileGrid, tiles: Vec<Vec<PixelOut>>) -> RenderOutput {
    let (w, h) = (grid.width, grid.height);
    let mut rgb = RgbImage::filled(w, h, [0.0; 3]);
    let mut depth = DepthMap::filled(w, h, 0.0);
    let mut alpha = Plane::filled(w, h, 0.0);
    for (t, px) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut it = px.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                let p = it.next().unwrap_or_default();
                rgb.set(x, y, p.rgb);
                depth.set(x, y, p.depth);
                alpha.set(x, y, p.alpha);
            }
        }
    }
    RenderOutput { rgb, depth, alpha }
}

/// Renders RGB over a black background, expected depth, and alpha.
pub fn render(scene: &GaussianScene, view: &CameraView) -> RenderOutput {
    let (w, h) = (view.width(), view.height());
    let splats = project_splats(scene, view);
    let grid = bin_splats(&splats, w, h);
    let tiles = par::map_indexed(grid.count(), |t| render_tile(&splats, &grid, t));
    assemble(&grid, tiles)
}

/// Per pixel, the camera depth at which the pixel ray attains maximum density
/// within the primitive whose contribution first lifts accumulated alpha to
/// `DEPTH_VALID_ALPHA`, or `None` if alpha never gets there. For a flattened
/// primitive this is where the ray pierces its plane.
pub fn render_surface(scene: &GaussianScene, view: &CameraView) -> Plane<Option<f64>> {
    let (w, h) = (view.width(), view.height());
    let splats = project_splats(scene, view);
    let grid = bin_splats(&splats, w, h);
    let k = view.intrinsics;
    let precision: Vec<Option<Matrix3<f64>>> = splats.iter().map(|s| s.cov_cam.try_inverse()).collect();
    let ray_depth = |pos: usize, x: usize, y: usize| {
        let s = &splats[pos];
        let d = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
        match &precision[pos] {
            Some(p) => {
                let pd = p * d;
                let t = s.cam.dot(&pd) / d.dot(&pd);
                if t.is_finite() && t > 0.0 { t } else { s.cam.z }
            }
            None => s.cam.z,
        }
    };
    let tiles = par::map_indexed(grid.count(), |t| {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                let mut trans = 1.0;
                let mut hit = None;
                for &pos in &grid.lists[t] {
                    let s = &splats[pos as usize];
                    if !(s.covers_row(y) && s.covers_column(x)) {
                        continue;
                    }
                    let (m, _, _) = s.mahalanobis(x as f64, y as f64);
                    let Some((k, _)) = kernel(m) else { continue };
                    trans *= 1.0 - (s.opacity * k).min(MAX_ALPHA);
                    if 1.0 - trans >= crate::DEPTH_VALID_ALPHA {
                        hit = Some(ray_depth(pos as usize, x, y));
                        break;
                    }
                }
                out.push(hit);
            }
        }
        out
    });
    let mut surface = Plane::filled(w, h, None);
    for (t, px) in tiles.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.bounds(t);
        let mut it = px.into_iter();
        for y in y0..y1 {
            for x in x0..x1 {
                surface.set(x, y, it.next().flatten());
            }
        }
    }
    surface
}

/// Brute-force renderer: every pixel visits every globally sorted primitive
/// and evaluates the projected Gaussian with an explicit matrix inverse.
/// Intended as a test oracle for [`render`].
pub fn render_reference(scene: &GaussianScene, view: &CameraView) -> RenderOutput {
    struct Projected {
        z: f64,
        index: usize,
        center: Vector2<f64>,
        inv: Matrix2<f64>,
        opacity: f64,
        color: Vector3<f64>,
    }
    let k = view.intrinsics;
    let w = view.rotation.to_rotation_matrix();
    let mut prims: Vec<Projected> = Vec::new();
    for (index, p) in scene.primitives().iter().enumerate() {
        let t = w * p.mean + view.translation;
        if culled(&t, &k) {
            continue;
        }
        let j = Matrix2x3::new(
            k.fx / t.z,
            0.0,
            -k.fx * t.x / (t.z * t.z),
            0.0,
            k.fy / t.z,
            -k.fy * t.y / (t.z * t.z),
        );
        let cov = j * w * p.covariance() * w.transpose() * j.transpose()
            + Matrix2::identity() * SCREEN_BLUR;
        let Some(inv) = cov.try_inverse() else { continue };
        prims.push(Projected {
            z: t.z,
            index,
            center: Vector2::new(k.fx * t.x / t.z + k.cx, k.fy * t.y / t.z + k.cy),
            inv,
            opacity: sigmoid(p.opacity_logit),
            color: p.color,
        });
    }
    prims.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.index.cmp(&b.index)));
    let tail = exp(-0.5 * FOOTPRINT_M2);

    let (wd, ht) = (k.width, k.height);
    let mut rgb = RgbImage::filled(wd, ht, [0.0; 3]);
    let mut depth = DepthMap::filled(wd, ht, 0.0);
    let mut alpha = Plane::filled(wd, ht, 0.0);
    for y in 0..ht {
        for x in 0..wd {
            let px = Vector2::new(x as f64, y as f64);
            let mut trans = 1.0;
            let mut c = Vector3::zeros();
            let mut d = 0.0;
            for p in &prims {
                let delta = px - p.center;
                let m = (delta.transpose() * p.inv * delta)[(0, 0)];
                if m >= FOOTPRINT_M2 {
                    continue;
                }
                let r = (FOOTPRINT_M2 - m) / 2.0;
                let r0 = FOOTPRINT_M2 / 2.0;
                let g = (exp(-m / 2.0) - tail * (1.0 + r + r * r / 2.0))
                    / (1.0 - tail * (1.0 + r0 + r0 * r0 / 2.0));
                let a = (p.opacity * g).min(MAX_ALPHA);
                c += p.color * (a * trans);
                d += p.z * a * trans;
                trans *= 1.0 - a;
            }
            let acc = 1.0 - trans;
            rgb.set(x, y, [c.x, c.y, c.z]);
            alpha.set(x, y, acc);
            depth.set(x, y, if acc > 0.0 { d / acc.max(DEPTH_EPS) } else { 0.0 });
        }
    }
    RenderOutput { rgb, depth, alpha }
}

/// Gradient of a scalar loss with respect to one primitive's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PrimitiveGrad {
    pub mean: Vector3<f64>,
    /// With respect to the stored `(w, x, y, z)`, projected onto the tangent
    /// space of the unit sphere.
    pub rotation: [f64; 4],
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl PrimitiveGrad {
    pub fn add_assign(&mut self, o: &Self) {
        self.mean += o.mean;
        for i in 0..4 {
            self.rotation[i] += o.rotation[i];
        }
        self.log_scale += o.log_scale;
        self.opacity_logit += o.opacity_logit;
        self.color += o.color;
    }

    pub fn scale(&mut self, f: f64) {
        self.mean *= f;
        self.rotation = self.rotation.map(|v| v * f);
        self.log_scale *= f;
        self.opacity_logit *= f;
        self.color *= f;
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.opacity_logit.abs();
        for v in self.mean.iter().chain(self.log_scale.iter()).chain(self.color.iter()) {
            m = m.max(v.abs());
        }
        for v in self.rotation {
            m = m.max(v.abs());
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }
}

/// Screen-space gradient accumulated for one splat.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    center: [f64; 2],
    conic: [f64; 3],
    opacity_logit: f64,
    color: [f64; 3],
}

struct Contribution {
    slot: usize,
    alpha: f64,
    trans: f64,
    kernel: f64,
    dkernel: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

/// Per-pixel loss callback: given the rendered color at `(x, y)`, returns the
/// pixel's loss term and its gradient with respect to the color.
pub trait PixelLoss: Sync {
    fn eval(&self, x: usize, y: usize, rgb: [f64; 3]) -> (f64, [f64; 3]);
}

struct TileGrad {
    loss: f64,
    grads: Vec<SplatGrad>,
}

fn backprop_tile(splats: &[Splat], grid: &TileGrid, t: usize, loss: &dyn PixelLoss) -> TileGrad {
    let (x0, x1, y0, y1) = grid.bounds(t);
    let list = &grid.lists[t];
    let mut grads = alloc::vec![SplatGrad::default(); list.len()];
    let mut contribs: Vec<Contribution> = Vec::new();
    let mut total = 0.0;
    let mut row: Vec<usize> = Vec::with_capacity(list.len());
    for y in y0..y1 {
        row.clear();
        row.extend((0..list.len()).filter(|&slot| splats[list[slot] as usize].covers_row(y)));
        for x in x0..x1 {
            let (px, py) = (x as f64, y as f64);
            contribs.clear();
            let mut trans = 1.0;
            let mut rgb = [0.0; 3];
            for &slot in &row {
                let s = &splats[list[slot] as usize];
                if !s.covers_column(x) {
                    continue;
                }
                let (m, dx, dy) = s.mahalanobis(px, py);
                let Some((k, dk)) = kernel(m) else { continue };
                let raw = s.opacity * k;
                let clamped = raw > MAX_ALPHA;
                let a = raw.min(MAX_ALPHA);
                let wgt = a * trans;
                for c in 0..3 {
                    rgb[c] += s.color[c] * wgt;
                }
                contribs.push(Contribution {
                    slot,
                    alpha: a,
                    trans,
                    kernel: k,
                    dkernel: dk,
                    clamped,
                    dx,
                    dy,
                });
                trans *= 1.0 - a;
                if trans < MIN_TRANSMITTANCE {
                    break;
                }
            }
            let (l, dl) = loss.eval(x, y, rgb);
            total += l;
            if dl == [0.0; 3] {
                continue;
            }
            // Color composited behind the current splat.
            let mut behind = [0.0; 3];
            for ct in contribs.iter().rev() {
                let s = &splats[list[ct.slot] as usize];
                let g = &mut grads[ct.slot];
                let wgt = ct.alpha * ct.trans;
                let mut g_alpha = 0.0;
                for c in 0..3 {
                    g.color[c] += dl[c] * wgt;
                    g_alpha += dl[c] * ct.trans * (s.color[c] - behind[c]);
                    behind[c] = ct.alpha * s.color[c] + (1.0 - ct.alpha) * behind[c];
                }
                if ct.clamped {
                    continue;
                }
                g.opacity_logit += g_alpha * s.opacity * (1.0 - s.opacity) * ct.kernel;
                let g_m = g_alpha * s.opacity * ct.dkernel;
                let [a, b, c] = s.conic;
                // m = a dx² + 2b dx dy + c dy², d = pixel − center.
                g.center[0] -= g_m * 2.0 * (a * ct.dx + b * ct.dy);
                g.center[1] -= g_m * 2.0 * (b * ct.dx + c * ct.dy);
                g.conic[0] += g_m * ct.dx * ct.dx;
                g.conic[1] += g_m * 2.0 * ct.dx * ct.dy;
                g.conic[2] += g_m * ct.dy * ct.dy;
            }
        }
    }
    TileGrad { loss: total, grads }
}

/// Derivatives of the rotation matrix with respect to `w, x, y, z`.
fn rotation_jacobians(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

fn chain_to_primitive(s: &Splat, g: &SplatGrad, p: &GaussianPrimitive, view: &CameraView) -> PrimitiveGrad {
    let k = &view.intrinsics;
    let w = view.rotation.to_rotation_matrix();
    let (x, y, z) = (s.cam.x, s.cam.y, s.cam.z);
    let [a, b, c] = s.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -(conic * g_conic * conic);
    let j = s.jac;
    let g_cov_cam = j.transpose() * g_cov2 * j;
    let g_jac = g_cov2 * j * s.cov_cam * 2.0;

    let g_center = Vector2::new(g.center[0], g.center[1]);
    let mut g_cam = j.transpose() * g_center;
    let z2 = z * z;
    let z3 = z2 * z;
    g_cam.x += g_jac[(0, 2)] * (-k.fx / z2);
    g_cam.y += g_jac[(1, 2)] * (-k.fy / z2);
    g_cam.z += g_jac[(0, 0)] * (-k.fx / z2)
        + g_jac[(0, 2)] * (2.0 * k.fx * x / z3)
        + g_jac[(1, 1)] * (-k.fy / z2)
        + g_jac[(1, 2)] * (2.0 * k.fy * y / z3);
    let g_mean = w.transpose() * g_cam;

    let g_cov = w.transpose() * g_cov_cam * w;
    let g_cov = (g_cov + g_cov.transpose()) * 0.5;
    let q = p.rotation.to_array();
    let r = rotation_matrix(q);
    let sc = p.scale();
    let m = r * Matrix3::from_diagonal(&sc);
    let g_m = g_cov * m * 2.0;
    let mut g_log_scale = Vector3::zeros();
    let mut g_r = Matrix3::zeros();
    for i in 0..3 {
        let col = g_m.column(i);
        g_log_scale[i] = col.dot(&r.column(i)) * sc[i];
        g_r.set_column(i, &(col * sc[i]));
    }
    let dr = rotation_jacobians(q);
    let mut g_q = [0.0; 4];
    for i in 0..4 {
        g_q[i] = g_r.component_mul(&dr[i]).sum();
    }
    let radial: f64 = (0..4).map(|i| g_q[i] * q[i]).sum();
    for i in 0..4 {
        g_q[i] -= radial * q[i];
    }

    PrimitiveGrad {
        mean: g_mean,
        rotation: g_q,
        log_scale: g_log_scale,
        opacity_logit: g.opacity_logit,
        color: Vector3::new(g.color[0], g.color[1], g.color[2]),
    }
}

/// Renders `view`, evaluates `loss` per pixel, and back-propagates it to every
/// primitive. Returns the summed loss and one gradient per primitive (zero for
/// primitives that do not touch the view).
pub fn render_backward(
    scene: &GaussianScene,
    view: &CameraView,
    loss: &dyn PixelLoss,
) -> (f64, Vec<PrimitiveGrad>) {
    let (w, h) = (view.width(), view.height());
    let splats = project_splats(scene, view);
    let grid = bin_splats(&splats, w, h);
    let tiles = par::map_indexed(grid.count(), |t| backprop_tile(&splats, &grid, t, loss));

    let mut total = 0.0;
    let mut per_splat = alloc::vec![SplatGrad::default(); splats.len()];
    for (t, tile) in tiles.iter().enumerate() {
        total += tile.loss;
        for (slot, g) in tile.grads.iter().enumerate() {
            let acc = &mut per_splat[grid.lists[t][slot] as usize];
            for i in 0..2 {
                acc.center[i] += g.center[i];
            }
            for i in 0..3 {
                acc.conic[i] += g.conic[i];
                acc.color[i] += g.color[i];
            }
            acc.opacity_logit += g.opacity_logit;
        }
    }

    let prims = scene.primitives();
    let chained = par::map_indexed(splats.len(), |i| {
        let s = &splats[i];
        chain_to_primitive(s, &per_splat[i], &prims[s.index], view)
    });
    let mut out = alloc::vec![PrimitiveGrad::default(); scene.len()];
    for (s, g) in splats.iter().zip(chained) {
        out[s.index] = g;
    }
    (total, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Provenance;
    use crate::pose::{Intrinsics, UnitQuaternion};

    fn view(w: usize, h: usize) -> CameraView {
        CameraView::new(
            UnitQuaternion::IDENTITY,
            Vector3::zeros(),
            Intrinsics {
                fx: 40.0,
                fy: 40.0,
                cx: (w / 2) as f64,
                cy: (h / 2) as f64,
                width: w,
                height: h,
            },
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_is_black_and_transparent() {
        let out = render(&GaussianScene::new(), &view(20, 12));
        assert!(out.alpha.as_slice().iter().all(|a| *a == 0.0));
        assert!(out.depth.as_slice().iter().all(|d| *d == 0.0));
        assert!(out.rgb.as_slice().iter().all(|c| *c == [0.0; 3]));
        assert_eq!(out, render_reference(&GaussianScene::new(), &view(20, 12)));
    }

    #[test]
    fn centered_gaussian_is_radially_symmetric() {
        let v = view(33, 33);
        let p = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 4.0), 0.3, 0.9, Vector3::new(1.0, 0.5, 0.2));
        let scene = GaussianScene::with_tag(alloc::vec![p], Provenance::Coarse);
        let out = render(&scene, &v);
        let c = 16usize;
        let peak = *out.alpha.get(c, c);
        // Closed form at the center: m = 0, kernel = 1.
        assert!((peak - 0.9).abs() < 1e-12);
        for y in 0..33 {
            for x in 0..33 {
                assert!(*out.alpha.get(x, y) <= peak);
                let mirrored = *out.alpha.get(32 - x, y);
                let transposed = *out.alpha.get(y, x);
                assert!((out.alpha.get(x, y) - mirrored).abs() < 1e-12);
                assert!((out.alpha.get(x, y) - transposed).abs() < 1e-12);
            }
        }
        // Pixel (c + 3, c): Σ′ = (40·0.3/4)² + 0.3 = 9.3, m = 9 / 9.3.
        let var = (40.0 * 0.3 / 4.0f64).powi(2) + SCREEN_BLUR;
        let m = 9.0 / var;
        let tail = (-4.5f64).exp();
        let r = (9.0 - m) / 2.0;
        let expected = 0.9 * ((-0.5 * m).exp() - tail * (1.0 + r + r * r / 2.0)) / (1.0 - 15.625 * tail);
        assert!((out.alpha.get(c + 3, c) - expected).abs() < 1e-12);
        assert!((out.depth.get(c, c) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_layer_compositing_by_hand() {
        // Tiny, very opaque splats centered on one pixel so that α = σ(o).
        let v = view(9, 9);
        let mut front = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 2.0), 1e-4, 0.6, Vector3::new(1.0, 0.0, 0.0));
        let mut back = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, 5.0), 1e-4, 0.8, Vector3::new(0.0, 0.0, 1.0));
        front.rotation = UnitQuaternion::IDENTITY;
        back.rotation = UnitQuaternion::IDENTITY;
        // Stored back-to-front to check that order comes from depth.
        let scene = GaussianScene::with_tag(alloc::vec![back, front], Provenance::Coarse);
        let out = render(&scene, &v);
        let rgb = out.rgb.get(4, 4);
        let a = *out.alpha.get(4, 4);
        assert!((rgb[0] - 0.6).abs() < 1e-9);
        assert!((rgb[2] - 0.8 * 0.4).abs() < 1e-9);
        assert!((a - (1.0 - 0.4 * 0.2)).abs() < 1e-9);
        let depth = (2.0 * 0.6 + 5.0 * 0.8 * 0.4) / 0.92;
        assert!((out.depth.get(4, 4) - depth).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_skipped() {
        let p = GaussianPrimitive::isotropic(Vector3::new(0.0, 0.0, -1.0), 0.5, 0.9, Vector3::repeat(1.0));
        let scene = GaussianScene::with_tag(alloc::vec![p], Provenance::Coarse);
        let out = render(&scene, &view(16, 16));
        assert!(out.alpha.as_slice().iter().all(|a| *a == 0.0));
    }
}
