//! Gaussian primitives and scenes.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::math::{exp, ln, sigmoid};
use crate::pose::UnitQuaternion;

/// Bounds on the per-axis standard deviation `exp(log_scale)`.
pub const MIN_SCALE: f64 = 1e-7;
pub const MAX_SCALE: f64 = 1e3;

/// One anisotropic 3D Gaussian with a degree-0 (view-independent) color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion,
    /// Natural log of the per-axis standard deviation.
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// RGB in `[0, 1]`.
    pub color: Vector3<f64>,
}

impl GaussianPrimitive {
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            mean,
            rotation: UnitQuaternion::IDENTITY,
            log_scale: Vector3::repeat(ln(sigma)),
            opacity_logit: crate::math::logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(exp)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(self)
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite();
        finite
            && self
                .scale()
                .iter()
                .all(|s| *s > MIN_SCALE && *s < MAX_SCALE)
    }
}

/// `Σ = R · diag(s²) · Rᵀ`.
pub fn covariance(p: &GaussianPrimitive) -> Matrix3<f64> {
    let r = p.rotation.to_rotation_matrix();
    let s = p.scale();
    let m = r * Matrix3::from_diagonal(&s);
    m * m.transpose()
}

/// Which pipeline stage injected a primitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Coarse,
    Expansion,
    Refinement,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Self::Coarse, Self::Expansion, Self::Refinement];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Coarse => "coarse",
            Self::Expansion => "expansion",
            Self::Refinement => "refinement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }
}

/// Ordered primitives with a provenance tag per primitive. The tag is fixed
/// when a primitive enters the scene.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    primitives: Vec<GaussianPrimitive>,
    provenance: Vec<Provenance>,
}

impl GaussianScene {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` if the two lists differ in length.
    pub fn from_parts(primitives: Vec<GaussianPrimitive>, provenance: Vec<Provenance>) -> Option<Self> {
        (primitives.len() == provenance.len()).then_some(Self {
            primitives,
            provenance,
        })
    }

    pub fn with_tag(primitives: Vec<GaussianPrimitive>, tag: Provenance) -> Self {
        let provenance = alloc::vec![tag; primitives.len()];
        Self {
            primitives,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    /// Parameters are mutable; provenance is not.
    pub fn primitives_mut(&mut self) -> &mut [GaussianPrimitive] {
        &mut self.primitives
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn push(&mut self, p: GaussianPrimitive, tag: Provenance) {
        self.primitives.push(p);
        self.provenance.push(tag);
    }

    pub fn extend(&mut self, added: impl IntoIterator<Item = GaussianPrimitive>, tag: Provenance) {
        for p in added {
            self.push(p, tag);
        }
    }

    pub fn count_tagged(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|t| **t == tag).count()
    }

    /// Applies the similarity `x ↦ scale·R·x + t` to every primitive.
    pub fn transformed(&self, rotation: &UnitQuaternion, translation: &Vector3<f64>, scale: f64) -> Self {
        let r = rotation.to_rotation_matrix();
        let dl = ln(scale);
        let primitives = self
            .primitives
            .iter()
            .map(|p| GaussianPrimitive {
                mean: r * p.mean * scale + translation,
                rotation: rotation.mul(&p.rotation),
                log_scale: p.log_scale.add_scalar(dl),
                ..*p
            })
            .collect();
        Self {
            primitives,
            provenance: self.provenance.clone(),
        }
    }
}

/// `base` followed by `added`, the latter tagged `tag`; base is untouched.
pub fn merge(base: &GaussianScene, added: &[GaussianPrimitive], tag: Provenance) -> GaussianScene {
    let mut out = base.clone();
    out.extend(added.iter().copied(), tag);
    out
}
