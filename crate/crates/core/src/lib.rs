//! Geometry, splatting, and optimization core for reconstructing a unified
//! Gaussian scene from two zero-overlap images.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. With `std` enabled, the rasterizer and gradient accumulation run
//! tiles in parallel on rayon; output is bit-identical either way.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod align;
pub mod coverage;
pub mod depth;
pub mod gaussian;
pub mod grid;
pub mod image;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod pose;
pub mod raster;
pub mod seed;
pub mod synth;

mod par;

pub use gaussian::{GaussianPrimitive, GaussianScene, Provenance};
pub use image::{DepthMap, Mask, Plane, RgbImage};
pub use pose::{CameraView, Intrinsics, UnitQuaternion};
pub use raster::{render, RenderOutput};

/// Alpha at or above which a rendered pixel carries a trustworthy depth.
pub const DEPTH_VALID_ALPHA: f64 = 0.5;
