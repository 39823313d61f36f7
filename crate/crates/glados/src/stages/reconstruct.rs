//! Coarse reconstruction: pair pointmaps from the geometry client, global
//! alignment, and the Gaussian scaffold.

use std::collections::BTreeMap;
use std::path::Path;

use glados_core::align::{global_align, scaffold_from_alignment, AlignError, AlignmentResult};
use glados_core::metrics::{photometric_error, AlignmentFailure};
use glados_core::synth::PAIRS;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::*;
use crate::formats::pointmap;
use crate::runlog::StageLog;

/// Written to `reconstruct/status.json`; evaluation reads the failure kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructStatus {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment_failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

pub fn failure_kind(e: &AlignError) -> AlignmentFailure {
    match e {
        AlignError::DisconnectedGraph => AlignmentFailure::DisconnectedGraph,
        _ => AlignmentFailure::EmptyAlignment,
    }
}

pub fn failure_name(f: AlignmentFailure) -> &'static str {
    match f {
        AlignmentFailure::DisconnectedGraph => "DisconnectedGraph",
        AlignmentFailure::EmptyAlignment => "EmptyAlignment",
    }
}

pub fn parse_failure(s: &str) -> Option<AlignmentFailure> {
    match s {
        "DisconnectedGraph" => Some(AlignmentFailure::DisconnectedGraph),
        "EmptyAlignment" => Some(AlignmentFailure::EmptyAlignment),
        _ => None,
    }
}

/// Coarse photometric error on both inputs, saved for comparison with the
/// final scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseMetrics {
    pub photo_error: f64,
    pub photo_error_per_view: [f64; 2],
    pub primitives: usize,
    pub alignment_residual: f64,
}

fn alignment_json(r: &AlignmentResult) -> serde_json::Value {
    let poses: BTreeMap<String, serde_json::Value> = r
        .poses
        .iter()
        .map(|(v, p)| {
            let t: [f64; 3] = p.translation.into();
            (v.to_string(), json!({ "rotation": p.rotation.to_array(), "translation": t }))
        })
        .collect();
    let scales: BTreeMap<String, f64> = r.pair_scales.iter().map(|((i, j), s)| (format!("{i}_{j}"), *s)).collect();
    json!({
        "camera_to_world": poses,
        "pair_scales": scales,
        "initial_residual": r.initial_residual,
        "residual": r.residual,
        "iterations": r.iterations,
        "converged": r.converged,
        "fused_points": r.fused_points.len(),
    })
}

pub fn run(ctx: &mut RunContext) -> StageResult<()> {
    let r = body(ctx);
    guard(ctx, "reconstruct", r)
}

fn write_status(dir: &Path, s: &ReconstructStatus) -> StageResult<()> {
    formats::write_json(&dir.join("status.json"), s)?;
    Ok(())
}

fn body(ctx: &mut RunContext) -> StageResult<()> {
    let [i1, i2] = ctx.inputs()?;
    let anchor = ctx.load_image("bridge/anchor.png")?;
    ctx.save_config()?;
    let clients = ctx.clients()?;
    let mut log = StageLog::create(&ctx.dir, "reconstruct")?;
    let dir = ctx.path(RECONSTRUCT_DIR);
    let images = [&i1, &anchor, &i2];
    let mut pairs = Vec::new();
    for (i, j) in PAIRS {
        let seed = ctx.seed(&format!("reconstruct/pointmaps/{i}_{j}"));
        let pm = clients
            .geometry
            .pointmaps(images[i as usize], images[j as usize], i, j, seed)?;
        let path = dir.join("pointmaps").join(pointmap::file_name(i, j));
        pointmap::save(&pm, &path)?;
        // Continue from the stored (f32) values so a rerun from disk matches.
        pairs.push(pointmap::load(&path)?);
        log.event("pointmaps", json!({ "pair": [i, j] }));
    }

    let fail = |log: &mut StageLog, e: AlignError| -> StageResult<()> {
        let kind = failure_kind(&e);
        log.event("alignment_failed", json!({ "error": e.to_string(), "kind": failure_name(kind) }));
        write_status(
            &dir,
            &ReconstructStatus {
                ok: false,
                alignment_failure: Some(failure_name(kind).into()),
                detail: Some(e.to_string()),
            },
        )?;
        Err(StageError::Reconstruction(e.to_string()))
    };
    let align_cfg = ctx.cfg.reconstruct.align();
    log.event("config", json!({
        "max_iterations": align_cfg.max_iterations,
        "step": align_cfg.step,
        "fuse_drop_quantile": align_cfg.fuse_drop_quantile,
        "fuse_stride": align_cfg.fuse_stride,
        "neighbors": ctx.cfg.reconstruct.neighbors,
    }));
    let result = match global_align(&pairs, &align_cfg) {
        Ok(r) => r,
        Err(e) => return fail(&mut log, e),
    };
    formats::write_json(&dir.join("alignment.json"), &alignment_json(&result))?;
    let scene = match scaffold_from_alignment(&result, &ctx.cfg.reconstruct.scaffold()) {
        Ok(s) => s,
        Err(e) => return fail(&mut log, e),
    };
    let intr = ctx.intrinsics(i1.width(), i1.height())?;
    let mut cams = Vec::new();
    for v in 0..3u32 {
        let pose = result
            .poses
            .get(&v)
            .ok_or_else(|| StageError::Reconstruction(format!("view {v} has no pose")))?;
        cams.push(
            pose.camera_view(intr)
                .map_err(|e| StageError::Config(format!("intrinsics: {e}")))?,
        );
    }
    save_cameras(&cams, &dir.join("cameras.json"))?;
    ply::save(&scene, &dir.join("scene.ply"))?;
    // Measure on the scene as stored so later stages compare like with like.
    let scene = ply::load(&dir.join("scene.ply"))?;
    let e0 = photometric_error(&scene, &cams[0], &i1).value;
    let e1 = photometric_error(&scene, &cams[2], &i2).value;
    let metrics = CoarseMetrics {
        photo_error: 0.5 * (e0 + e1),
        photo_error_per_view: [e0, e1],
        primitives: scene.len(),
        alignment_residual: result.residual,
    };
    formats::write_json(&dir.join("metrics.json"), &metrics)?;
    write_status(&dir, &ReconstructStatus { ok: true, alignment_failure: None, detail: None })?;
    log.event("aligned", json!({
        "residual": result.residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "primitives": scene.len(),
        "photo_error": metrics.photo_error,
    }));
    ctx.write_timing(RECONSTRUCT_DIR, log.elapsed_seconds())?;
    Ok(())
}
