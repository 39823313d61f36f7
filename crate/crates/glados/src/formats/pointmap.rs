//! `PPMP` pair pointmaps: magic, `u32` H, W, id_i, id_j, then `f32` planes in
//! the order pointmap_i, conf_i, colors_i, pointmap_j, conf_j, colors_j.
//! Three-channel planes are interleaved per pixel, row-major.

use std::path::Path;

use glados_core::align::PairPointmap;
use glados_core::image::Plane;

use super::{FormatError, Reader};

const MAGIC: &[u8; 4] = b"PPMP";

pub fn encode(pair: &PairPointmap) -> Vec<u8> {
    let (w, h) = pair.pointmap_i.dims();
    let mut out = Vec::with_capacity(20 + 14 * 4 * w * h);
    out.extend_from_slice(MAGIC);
    for v in [h as u32, w as u32, pair.view_i, pair.view_j] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for (pm, conf, col) in [
        (&pair.pointmap_i, &pair.confidence_i, &pair.colors_i),
        (&pair.pointmap_j, &pair.confidence_j, &pair.colors_j),
    ] {
        pm.as_slice().iter().flatten().for_each(|v| put(*v));
        conf.as_slice().iter().for_each(|v| put(*v));
        col.as_slice().iter().flatten().for_each(|v| put(*v));
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<PairPointmap, FormatError> {
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(MAGIC) {
        return Err(FormatError::malformed(path, "missing PPMP magic"));
    }
    let bad = || FormatError::malformed(path, "truncated PPMP header");
    let h = r.u32().ok_or_else(bad)? as usize;
    let w = r.u32().ok_or_else(bad)? as usize;
    let view_i = r.u32().ok_or_else(bad)?;
    let view_j = r.u32().ok_or_else(bad)?;
    let n = w * h;
    if r.remaining() != 14 * 4 * n {
        return Err(FormatError::malformed(path, format!("expected 14 float planes of {w}x{h}")));
    }
    let vec3 = |r: &mut Reader| {
        let data = (0..n)
            .map(|_| [0; 3].map(|_| r.f32().unwrap() as f64))
            .collect();
        Plane::from_vec(w, h, data).unwrap()
    };
    let scalar = |r: &mut Reader| Plane::from_vec(w, h, (0..n).map(|_| r.f32().unwrap() as f64).collect()).unwrap();
    let pointmap_i = vec3(&mut r);
    let confidence_i = scalar(&mut r);
    let colors_i = vec3(&mut r);
    let pointmap_j = vec3(&mut r);
    let confidence_j = scalar(&mut r);
    let colors_j = vec3(&mut r);
    Ok(PairPointmap {
        view_i,
        view_j,
        pointmap_i,
        confidence_i,
        colors_i,
        pointmap_j,
        confidence_j,
        colors_j,
    })
}

pub fn save(pair: &PairPointmap, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode(pair))
}

pub fn load(path: &Path) -> Result<PairPointmap, FormatError> {
    decode(&super::read(path)?, path)
}

/// Conventional file name for a pair.
pub fn file_name(i: u32, j: u32) -> String {
    format!("pair_{i}_{j}.ppmp")
}
