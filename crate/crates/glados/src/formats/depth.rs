//! `DPTH` depth maps: magic, `u32` width, `u32` height, `u32` reserved (0),
//! then `width × height` little-endian `f32` values in row-major order.

use std::path::Path;

use glados_core::image::DepthMap;

use super::{FormatError, Reader};

const MAGIC: &[u8; 4] = b"DPTH";

pub fn encode(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * depth.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for d in depth.as_slice() {
        out.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<DepthMap, FormatError> {
    let mut r = Reader::new(bytes);
    if r.take(4) != Some(MAGIC) {
        return Err(FormatError::malformed(path, "missing DPTH magic"));
    }
    let bad = || FormatError::malformed(path, "truncated DPTH header");
    let w = r.u32().ok_or_else(bad)? as usize;
    let h = r.u32().ok_or_else(bad)? as usize;
    r.u32().ok_or_else(bad)?;
    if r.remaining() != 4 * w * h {
        return Err(FormatError::malformed(path, format!("expected {} depth values", w * h)));
    }
    let data = (0..w * h).map(|_| r.f32().unwrap() as f64).collect();
    Ok(DepthMap::from_vec(w, h, data).unwrap())
}

pub fn save(depth: &DepthMap, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode(depth))
}

pub fn load(path: &Path) -> Result<DepthMap, FormatError> {
    decode(&super::read(path)?, path)
}
