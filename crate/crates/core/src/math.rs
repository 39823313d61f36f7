//! Scalar helpers routed through `libm` so results do not depend on the
//! platform's `std` float implementation.

pub use libm::{acos, atan2, ceil, cos, exp, fabs as abs, floor, log as ln, round, sin, sqrt, tan};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}
