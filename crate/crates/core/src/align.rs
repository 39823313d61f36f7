//! Coarse alignment of pairwise pointmaps into one world frame, and the
//! Gaussian scaffold seeded from the fused points.
//!
//! A pair `(i, j)` carries two pointmaps, one for each of its views, both
//! expressed in the camera frame of view `i` and known only up to a per-pair
//! scale. The world position of a pair point `X` is `R_i·(s_ij·X) + t_i`,
//! where `(R_i, t_i)` maps view `i`'s camera frame to the world. The gauge is
//! fixed by giving the lowest-numbered frame view the identity pose and the
//! first pair anchored in that view a scale of 1.
//!
//! The residual is the confidence-weighted sum of distances between every
//! two world-space observations of the same pixel of the same view, divided by
//! the total weight.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::gaussian::{GaussianPrimitive, GaussianScene, Provenance};
use crate::image::{Plane, RgbImage};
use crate::math::{exp, ln, sqrt};
use crate::par;
use crate::pose::{CameraView, Intrinsics, PoseError, UnitQuaternion};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("point configuration is degenerate (coincident or collinear)")]
    DegenerateConfiguration,
    #[error("pair graph is not connected")]
    DisconnectedGraph,
    #[error("no confident points survived alignment")]
    EmptyAlignment,
    #[error("invalid pointmap for pair ({0}, {1}): {2}")]
    InvalidPointmap(u32, u32, &'static str),
    #[error("pair ({0}, {1}) appears more than once")]
    DuplicatePair(u32, u32),
    #[error("no pairs supplied")]
    NoPairs,
}

/// Scaled rigid map `x ↦ scale·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) * self.scale + self.translation
    }
}

/// Weighted least-squares similarity taking `src` onto `dst`.
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Result<Similarity, AlignError> {
    assert!(src.len() == dst.len() && src.len() == weights.len());
    let total: f64 = weights.iter().sum();
    if src.len() < 3 || !(total > 0.0) {
        return Err(AlignError::DegenerateConfiguration);
    }
    let mut ms = Vector3::zeros();
    let mut md = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        ms += s * (*w / total);
        md += d * (*w / total);
    }
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        let (cs, cd) = (s - ms, d - md);
        cov += cd * cs.transpose() * (*w / total);
        var += cs.norm_squared() * (*w / total);
    }
    let svd = cov.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(AlignError::DegenerateConfiguration);
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| sv[*b].total_cmp(&sv[*a]));
    if var <= 1e-300 || sv[order[1]] <= 1e-12 * sv[order[0]] || sv[order[0]] == 0.0 {
        return Err(AlignError::DegenerateConfiguration);
    }
    let mut sign = Vector3::repeat(1.0);
    if (u * v_t).determinant() < 0.0 {
        sign[order[2]] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&sign) * v_t;
    let scale = sv.component_mul(&sign).sum() / var;
    let rotation = UnitQuaternion::from_rotation_matrix(&r);
    Ok(Similarity {
        scale,
        rotation,
        translation: md - rotation.rotate(&ms) * scale,
    })
}

/// Pointmaps for the ordered pair `(view_i, view_j)`, both in view `i`'s frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPointmap {
    pub view_i: u32,
    pub view_j: u32,
    pub pointmap_i: Plane<[f64; 3]>,
    pub confidence_i: Plane<f64>,
    pub colors_i: RgbImage,
    pub pointmap_j: Plane<[f64; 3]>,
    pub confidence_j: Plane<f64>,
    pub colors_j: RgbImage,
}

impl PairPointmap {
    pub fn validate(&self) -> Result<(), AlignError> {
        let err = |m| AlignError::InvalidPointmap(self.view_i, self.view_j, m);
        if self.view_i == self.view_j {
            return Err(err("a pair needs two distinct views"));
        }
        let d = self.pointmap_i.dims();
        if d.0 == 0 || d.1 == 0 {
            return Err(err("empty pointmap"));
        }
        let same = [
            self.confidence_i.dims(),
            self.colors_i.dims(),
            self.pointmap_j.dims(),
            self.confidence_j.dims(),
            self.colors_j.dims(),
        ]
        .iter()
        .all(|x| *x == d);
        if !same {
            return Err(err("planes differ in size"));
        }
        let conf_ok = |c: &Plane<f64>| c.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0);
        if !conf_ok(&self.confidence_i) || !conf_ok(&self.confidence_j) {
            return Err(err("confidence must be finite and non-negative"));
        }
        Ok(())
    }

    fn side(&self, second: bool) -> (u32, &Plane<[f64; 3]>, &Plane<f64>, &RgbImage) {
        if second {
            (self.view_j, &self.pointmap_j, &self.confidence_j, &self.colors_j)
        } else {
            (self.view_i, &self.pointmap_i, &self.confidence_i, &self.colors_i)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub max_iterations: usize,
    pub step: f64,
    /// Initialization uses only pixels whose weight reaches this quantile.
    pub init_quantile: f64,
    /// Fused points below this confidence quantile are dropped.
    pub fuse_drop_quantile: f64,
    /// Fused points are taken on every `fuse_stride`-th pixel in x and y.
    pub fuse_stride: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            step: 1e-2,
            init_quantile: 0.5,
            fuse_drop_quantile: 0.2,
            fuse_stride: 2,
        }
    }
}

/// Map from a view's camera frame to the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub const IDENTITY: Self = Self {
        rotation: UnitQuaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    /// The camera whose frame this pose describes.
    pub fn camera_view(&self, intrinsics: Intrinsics) -> Result<CameraView, PoseError> {
        let inv = self.rotation.inverse();
        CameraView::new(inv, -inv.rotate(&self.translation), intrinsics)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Camera-to-world pose of every view that is the reference view of at
    /// least one pair. Other views only contribute points.
    pub poses: BTreeMap<u32, RigidPose>,
    pub pair_scales: BTreeMap<(u32, u32), f64>,
    pub fused_points: Vec<FusedPoint>,
    pub initial_residual: f64,
    pub residual: f64,
    /// Residual after initialization and after each descent iteration.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration budget ran out before the step size collapsed.
    pub converged: bool,
}

/// One observation of a view's pixel grid: which pair, which side.
#[derive(Clone, Copy)]
struct Obs {
    pair: usize,
    second: bool,
}

struct Problem<'a> {
    pairs: &'a [PairPointmap],
    /// Frame view of each pair, as an index into `views`.
    frame: Vec<usize>,
    views: Vec<u32>,
    /// Observations grouped by the view they depict.
    obs: Vec<Vec<Obs>>,
    /// Every two observations of the same view.
    links: Vec<(Obs, Obs)>,
}

struct Grad {
    rot: Vec<Vector3<f64>>,
    trans: Vec<Vector3<f64>>,
    log_scale: Vec<f64>,
}

#[derive(Clone)]
struct State {
    rot: Vec<Matrix3<f64>>,
    trans: Vec<Vector3<f64>>,
    log_scale: Vec<f64>,
}

impl Problem<'_> {
    fn point(&self, o: Obs, pix: usize) -> (Vector3<f64>, f64) {
        let (_, pm, conf, _) = self.pairs[o.pair].side(o.second);
        (Vector3::from(pm.as_slice()[pix]), conf.as_slice()[pix])
    }

    fn world(&self, s: &State, o: Obs, x: &Vector3<f64>) -> Vector3<f64> {
        let f = self.frame[o.pair];
        s.rot[f] * (x * exp(s.log_scale[o.pair])) + s.trans[f]
    }

    fn npix(&self) -> usize {
        let (w, h) = self.pairs[0].pointmap_i.dims();
        w * h
    }

    /// Residual and, optionally, its gradient in the tangent coordinates
    /// (left rotation increment, translation, log scale). Work is split into
    /// fixed chunks of rows whose partial sums are reduced in chunk order.
    fn evaluate(&self, s: &State, want_grad: bool) -> (f64, Option<Grad>) {
        let (w, h) = self.pairs[0].pointmap_i.dims();
        let rows_per_chunk = 8;
        let chunks_per_link = h.div_ceil(rows_per_chunk);
        let work = self.links.len() * chunks_per_link;
        let zero = || Grad {
            rot: vec![Vector3::zeros(); self.views.len()],
            trans: vec![Vector3::zeros(); self.views.len()],
            log_scale: vec![0.0; self.pairs.len()],
        };
        let scales: Vec<f64> = s.log_scale.iter().map(|l| exp(*l)).collect();
        let partials = par::map_indexed(work, |k| {
            let (a, b) = self.links[k / chunks_per_link];
            let y0 = (k % chunks_per_link) * rows_per_chunk;
            let (fa, fb) = (self.frame[a.pair], self.frame[b.pair]);
            let mut g = want_grad.then(zero);
            let (mut total, mut wsum) = (0.0, 0.0);
            for pix in y0 * w..((y0 + rows_per_chunk).min(h)) * w {
                let (xa, ca) = self.point(a, pix);
                let (xb, cb) = self.point(b, pix);
                let wt = ca * cb;
                if wt <= 0.0 {
                    continue;
                }
                let ya = s.rot[fa] * (xa * scales[a.pair]);
                let yb = s.rot[fb] * (xb * scales[b.pair]);
                let d = ya + s.trans[fa] - yb - s.trans[fb];
                let n = d.norm();
                total += wt * n;
                wsum += wt;
                if let (Some(g), true) = (g.as_mut(), n > 1e-300) {
                    let u = d / n;
                    g.rot[fa] += ya.cross(&u) * wt;
                    g.rot[fb] -= yb.cross(&u) * wt;
                    g.trans[fa] += u * wt;
                    g.trans[fb] -= u * wt;
                    g.log_scale[a.pair] += wt * u.dot(&ya);
                    g.log_scale[b.pair] -= wt * u.dot(&yb);
                }
            }
            (total, wsum, g)
        });
        let mut g = want_grad.then(zero);
        let (mut total, mut wsum) = (0.0, 0.0);
        for (t, ws, pg) in partials {
            total += t;
            wsum += ws;
            if let (Some(g), Some(pg)) = (g.as_mut(), pg) {
                g.add(&pg);
            }
        }
        if wsum <= 0.0 {
            return (0.0, g);
        }
        if let Some(g) = g.as_mut() {
            g.scale(1.0 / wsum);
        }
        (total / wsum, g)
    }
}

impl Grad {
    fn add(&mut self, o: &Grad) {
        self.rot.iter_mut().zip(&o.rot).for_each(|(a, b)| *a += b);
        self.trans.iter_mut().zip(&o.trans).for_each(|(a, b)| *a += b);
        self.log_scale.iter_mut().zip(&o.log_scale).for_each(|(a, b)| *a += b);
    }

    fn scale(&mut self, f: f64) {
        self.rot.iter_mut().for_each(|r| *r *= f);
        self.trans.iter_mut().for_each(|t| *t *= f);
        self.log_scale.iter_mut().for_each(|l| *l *= f);
    }
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = crate::math::floor((values.len() as f64 - 1.0) * q) as usize;
    values[k.min(values.len() - 1)]
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Jointly estimates per-view poses and per-pair scales, then fuses all
/// observations into one confidence-filtered point set.
pub fn global_align(pairs: &[PairPointmap], config: &AlignConfig) -> Result<AlignmentResult, AlignError> {
    if pairs.is_empty() {
        return Err(AlignError::NoPairs);
    }
    let dims = pairs[0].pointmap_i.dims();
    for p in pairs {
        p.validate()?;
        if p.pointmap_i.dims() != dims {
            return Err(AlignError::InvalidPointmap(p.view_i, p.view_j, "pairs differ in resolution"));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by_key(|&k| (pairs[k].view_i, pairs[k].view_j));
    for w in order.windows(2) {
        let (a, b) = (&pairs[w[0]], &pairs[w[1]]);
        if (a.view_i, a.view_j) == (b.view_i, b.view_j) {
            return Err(AlignError::DuplicatePair(a.view_i, a.view_j));
        }
    }
    let pairs: Vec<PairPointmap> = order.iter().map(|&k| pairs[k].clone()).collect();

    let mut views: Vec<u32> = pairs.iter().flat_map(|p| [p.view_i, p.view_j]).collect();
    views.sort_unstable();
    views.dedup();
    let vidx = |v: u32| views.binary_search(&v).unwrap();

    let mut parent: Vec<usize> = (0..views.len()).collect();
    for p in &pairs {
        let (a, b) = (find(&mut parent, vidx(p.view_i)), find(&mut parent, vidx(p.view_j)));
        parent[a] = b;
    }
    let root = find(&mut parent, 0);
    if (0..views.len()).any(|v| find(&mut parent, v) != root) {
        return Err(AlignError::DisconnectedGraph);
    }

    let mut obs = vec![Vec::new(); views.len()];
    for (k, p) in pairs.iter().enumerate() {
        obs[vidx(p.view_i)].push(Obs { pair: k, second: false });
        obs[vidx(p.view_j)].push(Obs { pair: k, second: true });
    }
    let links = obs
        .iter()
        .flat_map(|list| {
            list.iter()
                .enumerate()
                .flat_map(move |(k, a)| list[k + 1..].iter().map(move |b| (*a, *b)))
        })
        .collect();
    let problem = Problem {
        pairs: &pairs,
        frame: pairs.iter().map(|p| vidx(p.view_i)).collect(),
        views: views.clone(),
        obs,
        links,
    };

    let mut state = initialize(&problem, config)?;
    let (residual_history, converged) = descend(&problem, &mut state, config);
    let initial_residual = residual_history[0];
    let residual = *residual_history.last().unwrap();

    let poses = views
        .iter()
        .enumerate()
        .filter(|(k, _)| problem.frame.contains(k))
        .map(|(k, v)| {
            let pose = RigidPose {
                rotation: UnitQuaternion::from_rotation_matrix(&state.rot[k]),
                translation: state.trans[k],
            };
            (*v, pose)
        })
        .collect();
    let pair_scales = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| ((p.view_i, p.view_j), exp(state.log_scale[k])))
        .collect();
    let fused_points = fuse(&problem, &state, config);
    Ok(AlignmentResult {
        poses,
        pair_scales,
        fused_points,
        initial_residual,
        residual,
        iterations: residual_history.len() - 1,
        residual_history,
        converged,
    })
}

/// Pixels of observation `o` and `b` that both carry weight at or above the
/// `q` quantile, with their product weights.
fn confident_overlap(problem: &Problem, a: Obs, b: Obs, q: f64) -> Vec<(usize, f64)> {
    let all: Vec<(usize, f64)> = (0..problem.npix())
        .map(|pix| (pix, problem.point(a, pix).1 * problem.point(b, pix).1))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    if all.is_empty() {
        return all;
    }
    let mut ws: Vec<f64> = all.iter().map(|x| x.1).collect();
    let cut = quantile(&mut ws, q);
    all.into_iter().filter(|(_, w)| *w >= cut).collect()
}

/// Places every view and pair by breadth-first chaining of Umeyama fits on
/// confident pixels, starting from the gauge.
fn initialize(problem: &Problem, config: &AlignConfig) -> Result<State, AlignError> {
    let nv = problem.views.len();
    let np = problem.pairs.len();
    let mut rot: Vec<Option<Matrix3<f64>>> = vec![None; nv];
    let mut trans = vec![Vector3::zeros(); nv];
    let mut scale: Vec<Option<f64>> = vec![None; np];

    let gauge_pair = 0;
    rot[problem.frame[gauge_pair]] = Some(Matrix3::identity());
    scale[gauge_pair] = Some(1.0);

    loop {
        let mut progress = false;
        for e in 0..np {
            if scale[e].is_some() {
                continue;
            }
            let f = problem.frame[e];
            for e0 in (0..np).filter(|e0| scale[*e0].is_some()) {
                let Some((a, b)) = shared_view(problem, e, e0) else { continue };
                let overlap = confident_overlap(problem, a, b, config.init_quantile);
                let s0 = scale[e0].unwrap();
                let f0 = problem.frame[e0];
                let r0 = rot[f0].unwrap();
                let dst: Vec<Vector3<f64>> = overlap
                    .iter()
                    .map(|(pix, _)| r0 * (problem.point(b, *pix).0 * s0) + trans[f0])
                    .collect();
                let src: Vec<Vector3<f64>> = overlap.iter().map(|(pix, _)| problem.point(a, *pix).0).collect();
                let w: Vec<f64> = overlap.iter().map(|x| x.1).collect();
                if let Some(r) = rot[f] {
                    // Frame already posed: only the scale is unknown.
                    let (mut num, mut den) = (0.0, 0.0);
                    for ((x, p), w) in src.iter().zip(&dst).zip(&w) {
                        num += w * (r * x).dot(&(p - trans[f]));
                        den += w * x.norm_squared();
                    }
                    if den > 0.0 && num > 0.0 {
                        scale[e] = Some(num / den);
                        progress = true;
                        break;
                    }
                } else if let Ok(sim) = umeyama(&src, &dst, &w) {
                    if sim.scale > 0.0 {
                        rot[f] = Some(sim.rotation.to_rotation_matrix());
                        trans[f] = sim.translation;
                        scale[e] = Some(sim.scale);
                        progress = true;
                        break;
                    }
                }
            }
        }
        if !progress {
            break;
        }
    }
    let unposed_frame = problem.frame.iter().any(|f| rot[*f].is_none());
    if scale.iter().any(|s| s.is_none()) || unposed_frame {
        return Err(AlignError::DisconnectedGraph);
    }
    Ok(State {
        rot: rot.into_iter().map(|r| r.unwrap_or_else(Matrix3::identity)).collect(),
        trans,
        log_scale: scale.into_iter().map(|s| ln(s.unwrap())).collect(),
    })
}

/// Observations of some common view in pairs `e` and `e0`, as `(in e, in e0)`.
fn shared_view(problem: &Problem, e: usize, e0: usize) -> Option<(Obs, Obs)> {
    let sides = |k: usize| {
        [false, true].map(|second| (problem.pairs[k].side(second).0, Obs { pair: k, second }))
    };
    for (v, a) in sides(e) {
        for (v0, b) in sides(e0) {
            if v == v0 {
                return Some((a, b));
            }
        }
    }
    None
}

fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_scaled_axis(w).to_rotation_matrix()
}

/// Normalized-gradient descent with step halving on failure. Returns the
/// residual after initialization and after every iteration, and whether the
/// step size collapsed (or the gradient vanished) within the budget.
fn descend(problem: &Problem, state: &mut State, config: &AlignConfig) -> (Vec<f64>, bool) {
    const MIN_STEP: f64 = 1e-12;
    let gauge_view = problem.frame[0];
    let mut step = config.step;
    let (mut current, mut grad) = problem.evaluate(state, true);
    let mut history = vec![current];
    for _ in 0..config.max_iterations {
        let g = grad.as_mut().unwrap();
        g.rot[gauge_view] = Vector3::zeros();
        g.trans[gauge_view] = Vector3::zeros();
        g.log_scale[0] = 0.0;
        let norm_sq: f64 = g.rot.iter().map(|r| r.norm_squared()).sum::<f64>()
            + g.trans.iter().map(|t| t.norm_squared()).sum::<f64>()
            + g.log_scale.iter().map(|l| l * l).sum::<f64>();
        let norm = sqrt(norm_sq);
        if norm == 0.0 || step < MIN_STEP {
            return (history, true);
        }
        let k = step / norm;
        let mut trial = state.clone();
        for v in 0..problem.views.len() {
            trial.rot[v] = so3_exp(&(g.rot[v] * -k)) * trial.rot[v];
            trial.trans[v] -= g.trans[v] * k;
        }
        for (l, dl) in trial.log_scale.iter_mut().zip(&g.log_scale) {
            *l -= dl * k;
        }
        let (r, tg) = problem.evaluate(&trial, true);
        if r < current {
            *state = trial;
            current = r;
            grad = tg;
        } else {
            step *= 0.5;
        }
        history.push(current);
    }
    (history, step < MIN_STEP)
}

fn fuse(problem: &Problem, state: &State, config: &AlignConfig) -> Vec<FusedPoint> {
    let (w, h) = problem.pairs[0].pointmap_i.dims();
    let stride = config.fuse_stride.max(1);
    let mut candidates = Vec::new();
    for list in &problem.obs {
        for y in (0..h).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let pix = y * w + x;
                let (mut sum, mut csum) = (Vector3::zeros(), 0.0);
                let mut best = (0.0, [0.0; 3]);
                for &o in list {
                    let (p, c) = problem.point(o, pix);
                    if c <= 0.0 {
                        continue;
                    }
                    sum += problem.world(state, o, &p) * c;
                    csum += c;
                    if c > best.0 {
                        best = (c, problem.pairs[o.pair].side(o.second).3.as_slice()[pix]);
                    }
                }
                if csum > 0.0 {
                    candidates.push(FusedPoint {
                        position: sum / csum,
                        color: Vector3::from(best.1),
                        confidence: csum / list.len() as f64,
                    });
                }
            }
        }
    }
    if candidates.is_empty() {
        return candidates;
    }
    let mut confs: Vec<f64> = candidates.iter().map(|p| p.confidence).collect();
    let cut = quantile(&mut confs, config.fuse_drop_quantile);
    candidates.retain(|p| p.confidence >= cut);
    candidates
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaffoldConfig {
    pub neighbors: usize,
    pub opacity: f64,
    /// Points at or below this confidence are ignored.
    pub min_confidence: f64,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        Self {
            neighbors: 3,
            opacity: 0.9,
            min_confidence: 0.0,
        }
    }
}

/// Bounding-box diagonal of the points, floored at 1e-2.
pub fn scene_scale(points: impl IntoIterator<Item = Vector3<f64>>) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut any = false;
    for p in points {
        lo = lo.inf(&p);
        hi = hi.sup(&p);
        any = true;
    }
    if any {
        (hi - lo).norm().max(1e-2)
    } else {
        1e-2
    }
}

/// One isotropic primitive per confident point. Its standard deviation is the
/// mean distance to its `k` nearest neighbours, clamped to
/// `[1e-4, 0.1] × scene_scale`.
pub fn scaffold(points: &[FusedPoint], config: &ScaffoldConfig) -> Result<GaussianScene, AlignError> {
    let pts: Vec<&FusedPoint> = points.iter().filter(|p| p.confidence > config.min_confidence).collect();
    if pts.is_empty() {
        return Err(AlignError::EmptyAlignment);
    }
    let positions: Vec<Vector3<f64>> = pts.iter().map(|p| p.position).collect();
    let ss = scene_scale(positions.iter().copied());
    let tree = KdTree::new(&positions);
    let prims = pts
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let d = tree.nearest(k, config.neighbors);
            let sigma = if d.is_empty() {
                0.1 * ss
            } else {
                (d.iter().sum::<f64>() / d.len() as f64).clamp(1e-4 * ss, 0.1 * ss)
            };
            GaussianPrimitive::isotropic(p.position, sigma, config.opacity, p.color.map(|c| c.clamp(0.0, 1.0)))
        })
        .collect();
    Ok(GaussianScene::with_tag(prims, Provenance::Coarse))
}

pub fn scaffold_from_alignment(result: &AlignmentResult, config: &ScaffoldConfig) -> Result<GaussianScene, AlignError> {
    scaffold(&result.fused_points, config)
}

/// Static 3-d tree stored as a permutation of point indices; the median of
/// each sub-slice is the node.
struct KdTree<'a> {
    pts: &'a [Vector3<f64>],
    idx: Vec<usize>,
}

impl<'a> KdTree<'a> {
    fn new(pts: &'a [Vector3<f64>]) -> Self {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        Self::build(pts, &mut idx, 0);
        Self { pts, idx }
    }

    fn build(pts: &[Vector3<f64>], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]).then(a.cmp(b)));
        let (left, right) = idx.split_at_mut(mid);
        Self::build(pts, left, depth + 1);
        Self::build(pts, &mut right[1..], depth + 1);
    }

    /// Distances from point `q` to its `k` nearest other points, ascending.
    fn nearest(&self, q: usize, k: usize) -> Vec<f64> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search(q, k, 0, self.idx.len(), 0, &mut best);
        }
        best.into_iter().map(|(d2, _)| sqrt(d2)).collect()
    }

    fn search(&self, q: usize, k: usize, lo: usize, hi: usize, depth: usize, best: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.idx[mid];
        if p != q {
            let d2 = (self.pts[p] - self.pts[q]).norm_squared();
            if best.len() < k || d2 < best[best.len() - 1].0 {
                let at = best.partition_point(|(d, i)| (*d, *i) < (d2, p));
                best.insert(at, (d2, p));
                best.truncate(k);
            }
        }
        let axis = depth % 3;
        let diff = self.pts[q][axis] - self.pts[p][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, k, near.0, near.1, depth + 1, best);
        if best.len() < k || diff * diff < best[best.len() - 1].0 {
            self.search(q, k, far.0, far.1, depth + 1, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud() -> Vec<Vector3<f64>> {
        (0..10)
            .map(|k| {
                let t = k as f64;
                Vector3::new(libm::sin(t * 1.3), libm::cos(t * 0.7) * 2.0, (t * 0.37) % 1.5)
            })
            .collect()
    }

    #[test]
    fn umeyama_identity_and_known_transform() {
        let src = cloud();
        let w = vec![1.0; src.len()];
        let s = umeyama(&src, &src, &w).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12 && s.rotation.angle_to(&UnitQuaternion::IDENTITY) < 1e-9);
        let truth = Similarity {
            scale: 2.0,
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z(), core::f64::consts::FRAC_PI_2),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let s = umeyama(&src, &dst, &w).unwrap();
        assert!((s.scale - 2.0).abs() < 1e-9);
        assert!(s.rotation.angle_to(&truth.rotation) < 1e-9);
        assert!((s.translation - truth.translation).norm() < 1e-9);
    }

    #[test]
    fn umeyama_rejects_degenerate_sets() {
        let line: Vec<_> = (0..10).map(|k| Vector3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        let w = vec![1.0; 10];
        assert_eq!(umeyama(&line, &line, &w), Err(AlignError::DegenerateConfiguration));
        let same = vec![Vector3::new(1.0, 2.0, 3.0); 10];
        assert_eq!(umeyama(&same, &same, &w), Err(AlignError::DegenerateConfiguration));
    }

    #[test]
    fn umeyama_handles_reflection_free_planar_sets() {
        let plane: Vec<_> = (0..20).map(|k| Vector3::new((k % 5) as f64, (k / 5) as f64, 0.0)).collect();
        let q = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0).normalize(), 2.5);
        let dst: Vec<_> = plane.iter().map(|p| q.rotate(p)).collect();
        let s = umeyama(&plane, &dst, &vec![1.0; 20]).unwrap();
        assert!(s.rotation.angle_to(&q) < 1e-9);
        assert!(s.rotation.to_rotation_matrix().determinant() > 0.0);
    }

    proptest! {
        #[test]
        fn umeyama_recovers_random_similarity(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..3.1,
            scale in 0.2f64..5.0,
            t in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let truth = Similarity {
                scale,
                rotation: UnitQuaternion::from_axis_angle(&axis.normalize(), angle),
                translation: Vector3::from(t),
            };
            let src = cloud();
            let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
            let s = umeyama(&src, &dst, &vec![1.0; src.len()]).unwrap();
            prop_assert!(weighted_sse(&s, &src, &dst) <= weighted_sse(&IDENTITY_SIM, &src, &dst) + 1e-9);
            prop_assert!((s.scale - scale).abs() < 1e-9 * scale);
            prop_assert!(s.rotation.angle_to(&truth.rotation) < 1e-7);
            prop_assert!((s.translation - truth.translation).norm() < 1e-8 * (1.0 + truth.translation.norm()));
        }
    }

    const IDENTITY_SIM: Similarity = Similarity {
        scale: 1.0,
        rotation: UnitQuaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    fn weighted_sse(s: &Similarity, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        src.iter().zip(dst).map(|(a, b)| (s.apply(a) - b).norm_squared()).sum()
    }

    proptest! {
        #[test]
        fn umeyama_never_worse_than_identity(
            src in prop::collection::vec(prop::array::uniform3(-3.0f64..3.0), 4..20),
            noise in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 20),
        ) {
            let src: Vec<Vector3<f64>> = src.into_iter().map(Vector3::from).collect();
            let dst: Vec<Vector3<f64>> = src.iter().zip(&noise).map(|(p, n)| p * 1.5 + Vector3::from(*n)).collect();
            if let Ok(s) = umeyama(&src, &dst, &vec![1.0; src.len()]) {
                prop_assert!(weighted_sse(&s, &src, &dst) <= weighted_sse(&IDENTITY_SIM, &src, &dst) + 1e-9);
            }
        }
    }

    fn brute_knn(pts: &[Vector3<f64>], q: usize, k: usize) -> Vec<f64> {
        let mut d: Vec<f64> = (0..pts.len()).filter(|i| *i != q).map(|i| (pts[i] - pts[q]).norm()).collect();
        d.sort_by(f64::total_cmp);
        d.truncate(k);
        d
    }

    proptest! {
        #[test]
        fn kd_tree_matches_brute_force(pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..60), k in 1usize..5) {
            let pts: Vec<Vector3<f64>> = pts.into_iter().map(Vector3::from).collect();
            let tree = KdTree::new(&pts);
            for q in 0..pts.len() {
                let got = tree.nearest(q, k);
                let want = brute_knn(&pts, q, k);
                prop_assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    prop_assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    fn fp(p: Vector3<f64>, c: f64) -> FusedPoint {
        FusedPoint {
            position: p,
            color: Vector3::new(0.2, 0.4, 0.6),
            confidence: c,
        }
    }

    #[test]
    fn scaffold_examples() {
        let one = scaffold(&[fp(Vector3::new(1.0, 2.0, 3.0), 1.0)], &ScaffoldConfig::default()).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.primitives()[0].mean, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(one.primitives()[0].color, Vector3::new(0.2, 0.4, 0.6));
        assert_eq!(one.provenance()[0], Provenance::Coarse);

        let h = 0.05;
        let grid: Vec<FusedPoint> = (0..400)
            .map(|k| fp(Vector3::new((k % 20) as f64 * h, (k / 20) as f64 * h, 1.0), 1.0))
            .collect();
        let s = scaffold(&grid, &ScaffoldConfig::default()).unwrap();
        for p in s.primitives() {
            let sigma = p.scale().x;
            assert!((sigma - h).abs() <= 0.2 * h + 0.2 * h * 0.414, "sigma {sigma}");
            assert!((p.opacity() - 0.9).abs() < 1e-12);
        }
        let mean: f64 = s.primitives().iter().map(|p| p.scale().x).sum::<f64>() / 400.0;
        assert!((mean - h).abs() < 0.2 * h);

        let zero: Vec<FusedPoint> = grid.iter().map(|p| FusedPoint { confidence: 0.0, ..*p }).collect();
        assert_eq!(scaffold(&zero, &ScaffoldConfig::default()), Err(AlignError::EmptyAlignment));
    }
}
