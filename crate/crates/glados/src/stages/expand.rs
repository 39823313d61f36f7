//! Warp-and-inpaint context expansion along the trajectory.

use glados_core::coverage::{detect_holes, valid_depth_mask};
use glados_core::depth::{affine_align, unproject_masked, DepthAlignment};
use glados_core::gaussian::merge;
use glados_core::optim::{optimize, OptimizerConfig};
use glados_core::{render, Provenance};
use serde_json::json;

use super::*;
use crate::config::ExpandConfig;
use crate::formats::depth as dpth;
use crate::runlog::StageLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    SkippedNoHole,
    Inpainted,
    SkippedError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionEvent {
    /// Index into the evaluation trajectory.
    pub view: usize,
    pub outcome: Outcome,
    pub hole_ratio: f64,
    pub injected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Trajectory indices visited by expansion: every `subsample`-th pose,
/// starting with the `subsample`-th.
pub fn expansion_indices(n: usize, subsample: usize) -> Vec<usize> {
    (1..=n / subsample).map(|k| k * subsample - 1).collect()
}

pub struct ExpandInputs<'a> {
    pub clients: &'a PriorClients,
    pub config: &'a ExpandConfig,
    /// `(trajectory index, camera)` in visiting order.
    pub views: &'a [(usize, CameraView)],
    /// Ground-truth targets kept in every fit.
    pub anchors: &'a [Target],
    pub prompt: &'a str,
    pub run_seed: u64,
    /// Where per-view artifacts go, if anywhere.
    pub artifacts: Option<&'a Path>,
}

fn alignment_json(a: &DepthAlignment) -> serde_json::Value {
    json!({
        "scale": a.scale,
        "shift": a.shift,
        "inlier_count": a.inlier_count,
        "rms_residual": a.rms_residual,
        "status": format!("{:?}", a.status),
    })
}

/// Visits each view in order; inpaints, lifts, and refits wherever the
/// hole ratio exceeds the threshold. Client and alignment failures skip the
/// view.
pub fn expand(
    scene: &GaussianScene,
    input: &ExpandInputs,
    mut log: Option<&mut StageLog>,
) -> StageResult<(GaussianScene, Vec<ExpansionEvent>)> {
    let cfg = input.config;
    let mut scene = scene.clone();
    let mut targets: Vec<Target> = input.anchors.to_vec();
    let mut events = Vec::with_capacity(input.views.len());
    let opt = OptimizerConfig::with_steps(cfg.inject_opt_steps);
    for (idx, view) in input.views {
        let out = render(&scene, view);
        let (mask, hole_ratio) = detect_holes(&out, cfg.hole_alpha_threshold);
        let mut event = ExpansionEvent {
            view: *idx,
            outcome: Outcome::SkippedNoHole,
            hole_ratio,
            injected: 0,
            detail: None,
        };
        let dir = input.artifacts.map(|d| d.join(format!("view_{idx:03}")));
        if let Some(d) = &dir {
            image::save_rgb(&out.rgb, &d.join("render.png"))?;
            image::save_alpha(&out.alpha, &d.join("alpha.png"))?;
            image::save_mask(&mask, &d.join("mask.png"))?;
        }
        if hole_ratio > cfg.significant_hole_ratio {
            let stream = |op: &str| stream_seed(input.run_seed, &format!("expand/view_{idx}/{op}"));
            let attempt = (|| -> Result<(RgbImage, _, DepthAlignment), String> {
                let inpainted = input
                    .clients
                    .inpaint
                    .inpaint(&out.rgb, &mask, input.prompt, stream("inpaint"))
                    .map_err(|e| e.to_string())?;
                let depth = input
                    .clients
                    .depth
                    .depth(&inpainted, Some(view), stream("depth"))
                    .map_err(|e| e.to_string())?;
                let a = affine_align(&depth, &out.depth, &valid_depth_mask(&out)).map_err(|e| e.to_string())?;
                Ok((inpainted, depth, a))
            })();
            match attempt {
                Ok((inpainted, depth, a)) => {
                    if let Some(d) = &dir {
                        image::save_rgb(&inpainted, &d.join("inpainted.png"))?;
                        dpth::save(&depth, &d.join("depth.dpth"))?;
                        formats::write_json(&d.join("alignment.json"), &alignment_json(&a))?;
                    }
                    match unproject_masked(&inpainted, &depth, &a, &mask, view, cfg.lift_stride) {
                        Ok(added) => {
                            scene = merge(&scene, &added, Provenance::Expansion);
                            targets.push(Target::new(*view, inpainted));
                            scene = optimize(&scene, &targets, &opt)?.scene;
                            event.outcome = Outcome::Inpainted;
                            event.injected = added.len();
                        }
                        Err(e) => {
                            event.outcome = Outcome::SkippedError;
                            event.detail = Some(e.to_string());
                        }
                    }
                }
                Err(detail) => {
                    event.outcome = Outcome::SkippedError;
                    event.detail = Some(detail);
                }
            }
        }
        if let Some(l) = log.as_deref_mut() {
            l.event(
                "view",
                json!({
                    "view": event.view,
                    "outcome": event.outcome,
                    "hole_ratio": event.hole_ratio,
                    "injected": event.injected,
                    "opt_steps": if event.outcome == Outcome::Inpainted { cfg.inject_opt_steps } else { 0 },
                    "detail": event.detail,
                }),
            );
        }
        events.push(event);
    }
    Ok((scene, events))
}

/// Runs expansion followed by multiview consistency sampling.
pub fn run(ctx: &mut RunContext) -> StageResult<()> {
    let r = body(ctx);
    let r = guard(ctx, "expand", r);
    r?;
    super::mcs::run(ctx)
}

fn body(ctx: &mut RunContext) -> StageResult<()> {
    let scene = ctx.load_scene("reconstruct/scene.ply")?;
    let prompt = std::fs::read_to_string(ctx.require("bridge/prompt.txt")?)
        .map_err(|e| FormatError::io(&ctx.path("bridge/prompt.txt"), e))?;
    let anchors = ctx.anchor_targets()?;
    let traj = ctx.trajectory()?;
    ctx.save_config()?;
    let clients = ctx.clients()?;
    let cfg = ctx.cfg.expand.clone();
    let mut log = StageLog::create(&ctx.dir, "expand")?;
    let indices = expansion_indices(traj.len(), cfg.subsample);
    log.event(
        "config",
        json!({
            "inject_opt_steps": cfg.inject_opt_steps,
            "hole_alpha_threshold": cfg.hole_alpha_threshold,
            "significant_hole_ratio": cfg.significant_hole_ratio,
            "lift_stride": cfg.lift_stride,
            "trajectory_n": traj.len(),
            "views": indices,
        }),
    );
    let views: Vec<(usize, CameraView)> = indices.iter().map(|i| (*i, traj[*i])).collect();
    let dir = ctx.path(EXPAND_DIR);
    let input = ExpandInputs {
        clients: &clients,
        config: &cfg,
        views: &views,
        anchors: &anchors,
        prompt: &prompt,
        run_seed: ctx.cfg.seed,
        artifacts: Some(&dir),
    };
    let (scene, events) = expand(&scene, &input, Some(&mut log))?;
    formats::write_json(&dir.join("events.json"), &events)?;
    ply::save(&scene, &dir.join("scene.ply"))?;
    log.event(
        "done",
        json!({
            "primitives": scene.len(),
            "expansion_primitives": scene.count_tagged(Provenance::Expansion),
        }),
    );
    ctx.write_timing(EXPAND_DIR, log.elapsed_seconds())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsampled_indices() {
        let idx = expansion_indices(200, 10);
        assert_eq!(idx.len(), 20);
        assert_eq!((idx[0], idx[19]), (9, 199));
        assert_eq!(expansion_indices(5, 10), Vec::<usize>::new());
    }
}
