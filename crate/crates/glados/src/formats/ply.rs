//! Splat PLY (binary little-endian, one `vertex` element of `float`
//! properties) plus a `<name>.meta.json` sidecar carrying provenance tags.
//!
//! Colors are written as the degree-0 spherical-harmonic coefficient
//! `f_dc = (c - 0.5) / SH_C0` so common splat viewers show them correctly.
//! Every field passes through `f32`, so a save/load cycle is exact for scenes
//! already on the `f32` grid, and any loaded scene re-saves to identical bytes.

use std::path::{Path, PathBuf};

use glados_core::{GaussianPrimitive, GaussianScene, Provenance, UnitQuaternion};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{FormatError, Reader};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// Property names in the order they are written.
pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
    "rot_2", "rot_3",
];

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    count: usize,
    provenance: Vec<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

fn to_f32(q: [f64; 4]) -> [f32; 4] {
    q.map(|v| v as f32)
}

/// The stored quaternion is renormalized on load, which can move its `f32`
/// rounding by one unit. Writing a value that survives that step keeps
/// load/save idempotent.
fn stable_rotation(q: &UnitQuaternion) -> [f32; 4] {
    let reload = |s: [f32; 4]| to_f32(UnitQuaternion::from_array(s.map(f64::from)).to_array());
    let base = to_f32(q.to_array());
    // Offsets of -1, 0, +1 units in the last place per component, nearest first.
    let mut offsets: Vec<[i32; 4]> = (0..81)
        .map(|k| [k % 3, (k / 3) % 3, (k / 9) % 3, k / 27].map(|d| d - 1))
        .collect();
    offsets.sort_by_key(|o| o.iter().map(|d| d.abs()).sum::<i32>());
    offsets
        .iter()
        .map(|o| {
            let mut s = base;
            for (v, d) in s.iter_mut().zip(o) {
                *v = step_ulps(*v, *d);
            }
            s
        })
        .find(|s| reload(*s) == *s)
        .unwrap_or(base)
}

fn step_ulps(v: f32, d: i32) -> f32 {
    match d {
        1 => v.next_up(),
        -1 => v.next_down(),
        _ => v,
    }
}

fn record(p: &GaussianPrimitive) -> [f32; 14] {
    let q = stable_rotation(&p.rotation);
    let dc = p.color.map(|c| (c - 0.5) / SH_C0);
    let head = [
        p.mean.x, p.mean.y, p.mean.z, dc.x, dc.y, dc.z, p.opacity_logit, p.log_scale.x, p.log_scale.y, p.log_scale.z,
    ]
    .map(|v| v as f32);
    let mut out = [0f32; 14];
    out[..10].copy_from_slice(&head);
    out[10..].copy_from_slice(&q);
    out
}

fn primitive(v: &[f64; 14]) -> GaussianPrimitive {
    GaussianPrimitive {
        mean: Vector3::new(v[0], v[1], v[2]),
        color: Vector3::new(v[3], v[4], v[5]).map(|d| d * SH_C0 + 0.5),
        opacity_logit: v[6],
        log_scale: Vector3::new(v[7], v[8], v[9]),
        rotation: UnitQuaternion::from_array([v[10], v[11], v[12], v[13]]),
    }
}

pub fn encode(scene: &GaussianScene) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.len()
    )
    .into_bytes();
    for name in PROPERTIES {
        out.extend_from_slice(format!("property float {name}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for p in scene.primitives() {
        for v in record(p) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes the vertex payload; every primitive is tagged coarse.
pub fn decode(bytes: &[u8], path: &Path) -> Result<GaussianScene, FormatError> {
    let bad = |d: String| FormatError::malformed(path, d);
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| bad("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(bad(format!("unsupported format {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("element vertex: bad count {n}")))?);
                in_vertex = true;
            }
            ["element", name, _] => return Err(bad(format!("unexpected element {name}"))),
            ["property", ty, name] if in_vertex => {
                if !matches!(*ty, "float" | "float32") {
                    return Err(bad(format!("property {name}: type {ty} is not float")));
                }
                props.push((*name).to_string());
            }
            _ => return Err(bad(format!("unrecognized header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("missing element vertex".into()))?;
    let mut columns = [0usize; 14];
    for (slot, name) in columns.iter_mut().zip(PROPERTIES) {
        *slot = props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| bad(format!("missing vertex property {name}")))?;
    }
    let stride = 4 * props.len();
    let mut r = Reader::new(&bytes[end + 11..]);
    if r.remaining() != count * stride {
        return Err(bad(format!("element vertex: expected {count} records of {stride} bytes")));
    }
    let mut prims = Vec::with_capacity(count);
    let mut row = vec![0f32; props.len()];
    for _ in 0..count {
        for v in row.iter_mut() {
            *v = r.f32().unwrap();
        }
        let values = columns.map(|c| row[c] as f64);
        prims.push(primitive(&values));
    }
    Ok(GaussianScene::with_tag(prims, Provenance::Coarse))
}

/// Writes the PLY and its provenance sidecar.
pub fn save(scene: &GaussianScene, path: &Path) -> Result<(), FormatError> {
    super::write(path, &encode(scene))?;
    let meta = Sidecar {
        count: scene.len(),
        provenance: scene.provenance().iter().map(|t| t.as_str().to_string()).collect(),
    };
    super::write_json(&sidecar_path(path), &meta)
}

/// Reads the PLY and, when present, its sidecar. Without a sidecar every
/// primitive is tagged coarse.
pub fn load(path: &Path) -> Result<GaussianScene, FormatError> {
    let scene = decode(&super::read(path)?, path)?;
    let meta_path = sidecar_path(path);
    if !meta_path.exists() {
        return Ok(scene);
    }
    let meta: Sidecar = super::read_json(&meta_path)?;
    if meta.count != scene.len() || meta.provenance.len() != scene.len() {
        return Err(FormatError::malformed(&meta_path, "provenance count differs from vertex count"));
    }
    let tags = meta
        .provenance
        .iter()
        .map(|s| Provenance::parse(s).ok_or_else(|| FormatError::malformed(&meta_path, format!("unknown tag {s}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GaussianScene::from_parts(scene.primitives().to_vec(), tags).unwrap())
}
