//! Multiview consistency sampling: render a batch of trajectory views at
//! high resolution, rectify them jointly, and refit the scene to them.

use glados_core::image::Mask;
use glados_core::optim::{optimize, OptimizerConfig};
use glados_core::render;
use serde_json::json;

use super::*;
use crate::config::ExpandConfig;
use crate::imgops;
use crate::runlog::StageLog;

/// Centered-uniform selection of `count` indices from `n`:
/// `⌊(k + 0.5)·n / count⌋`.
pub fn mcs_indices(n: usize, count: usize) -> Vec<usize> {
    (0..count).map(|k| ((2 * k + 1) * n) / (2 * count)).collect()
}

pub struct McsOutcome {
    pub scene: GaussianScene,
    pub indices: Vec<usize>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Renders the selected views at `config.mcs_resolution`, rectifies them,
/// and fits the scene at working resolution to the rectified views (masked
/// to rendered coverage) plus `anchors`.
pub fn mcs_refine(
    scene: &GaussianScene,
    clients: &PriorClients,
    config: &ExpandConfig,
    trajectory: &[CameraView],
    anchors: &[Target],
    seed: u64,
    artifacts: Option<&Path>,
    mut log: Option<&mut StageLog>,
) -> StageResult<McsOutcome> {
    let indices = mcs_indices(trajectory.len(), config.mcs_views);
    let [hw, hh] = config.mcs_resolution;
    let renders: Vec<_> = indices
        .iter()
        .map(|i| render(scene, &trajectory[*i].resized(hw, hh)))
        .collect();
    let images: Vec<RgbImage> = renders.iter().map(|r| r.rgb.clone()).collect();
    for (k, i) in indices.iter().enumerate() {
        if let Some(l) = log.as_deref_mut() {
            l.event("render_submit", json!({ "slot": k, "view": i, "resolution": [hw, hh] }));
        }
    }
    let rectified = clients
        .consistency
        .rectify(&images, config.mcs_noise_steps, config.mcs_total_steps, seed)?;
    if rectified.len() != images.len() || rectified.iter().zip(&images).any(|(r, i)| !r.same_dims(i)) {
        return Err(ClientError {
            stage: "consistency".into(),
            detail: "rectified batch does not match the submitted views".into(),
        }
        .into());
    }
    if let Some(l) = log.as_deref_mut() {
        l.event(
            "consistency",
            json!({
                "views": images.len(),
                "noise_steps": config.mcs_noise_steps,
                "total_steps": config.mcs_total_steps,
                "guidance": false,
            }),
        );
    }
    let mut targets = anchors.to_vec();
    for (k, i) in indices.iter().enumerate() {
        let view = trajectory[*i];
        let (w, h) = (view.width(), view.height());
        let alpha = imgops::resize_plane(&renders[k].alpha, w, h);
        let mask = Mask::from_vec(w, h, alpha.as_slice().iter().map(|a| *a >= glados_core::DEPTH_VALID_ALPHA).collect())
            .unwrap();
        let image = imgops::resize_area(&rectified[k], w, h);
        if let Some(d) = artifacts {
            image::save_rgb(&images[k], &d.join(format!("view_{k}_render.png")))?;
            image::save_rgb(&rectified[k], &d.join(format!("view_{k}_rectified.png")))?;
        }
        targets.push(Target {
            view,
            image,
            mask: Some(mask),
        });
    }
    let opt = OptimizerConfig {
        lr_mean: config.mcs_center_lr,
        ..OptimizerConfig::with_steps(config.mcs_opt_steps)
    };
    if let Some(l) = log.as_deref_mut() {
        l.event("fit", json!({ "opt_steps": opt.steps, "lr_mean": opt.lr_mean, "targets": targets.len() }));
    }
    let fit = optimize(scene, &targets, &opt)?;
    Ok(McsOutcome {
        scene: fit.scene,
        indices,
        initial_loss: fit.losses.first().copied().unwrap_or(fit.final_loss),
        final_loss: fit.final_loss,
    })
}

pub fn run(ctx: &mut RunContext) -> StageResult<()> {
    let r = body(ctx);
    guard(ctx, "mcs", r)
}

fn body(ctx: &mut RunContext) -> StageResult<()> {
    let scene = ctx.load_scene("expand/scene.ply")?;
    let anchors = ctx.anchor_targets()?;
    let traj = ctx.trajectory()?;
    let clients = ctx.clients()?;
    let cfg = ctx.cfg.expand.clone();
    let mut log = StageLog::create(&ctx.dir, "mcs")?;
    log.event(
        "config",
        json!({
            "mcs_views": cfg.mcs_views,
            "mcs_resolution": cfg.mcs_resolution,
            "mcs_noise_steps": cfg.mcs_noise_steps,
            "mcs_total_steps": cfg.mcs_total_steps,
            "mcs_opt_steps": cfg.mcs_opt_steps,
            "mcs_center_lr": cfg.mcs_center_lr,
        }),
    );
    let dir = ctx.path(MCS_DIR);
    let seed = ctx.seed("mcs/consistency");
    let out = mcs_refine(&scene, &clients, &cfg, &traj, &anchors, seed, Some(&dir), Some(&mut log))?;
    ply::save(&out.scene, &dir.join("scene.ply"))?;
    log.event(
        "done",
        json!({ "views": out.indices, "initial_loss": out.initial_loss, "final_loss": out.final_loss }),
    );
    ctx.write_timing(MCS_DIR, log.elapsed_seconds())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_uniform_indices() {
        assert_eq!(mcs_indices(200, 8), vec![12, 37, 62, 87, 112, 137, 162, 187]);
        assert_eq!(mcs_indices(8, 8), (0..8).collect::<Vec<_>>());
    }
}
