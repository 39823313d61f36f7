//! Anchored grid inpainting cycles: the two inputs anchor a 2×2 composite
//! whose two novel tiles are inpainted at their holes, lifted into the
//! scene, and fitted.

use glados_core::coverage::{detect_holes, valid_depth_mask};
use glados_core::depth::{affine_align, unproject_masked};
use glados_core::gaussian::merge;
use glados_core::grid::{assemble_grid, disassemble_grid, GridLayout, TileSource};
use glados_core::optim::{optimize, OptimizerConfig};
use glados_core::{render, GaussianPrimitive, Provenance, RenderOutput};
use serde_json::json;

use super::*;
use crate::config::RefineConfig;
use crate::imgops;
use crate::runlog::StageLog;

/// Indices of the `k` largest ratios, largest first; ties go to the lower
/// index.
pub fn select_views(ratios: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|a, b| ratios[*b].total_cmp(&ratios[*a]).then(a.cmp(b)));
    order.truncate(k);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub noise_level: f64,
    /// Trajectory indices of the two novel tiles; empty for a no-op cycle.
    pub views: Vec<usize>,
    pub hole_ratios: Vec<f64>,
    pub injected: usize,
    pub noop: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_tiles: Vec<String>,
}

pub struct RefineInputs<'a> {
    pub clients: &'a PriorClients,
    pub config: &'a RefineConfig,
    /// The two inputs with their cameras.
    pub ground_truth: &'a [Target; 2],
    pub trajectory: &'a [CameraView],
    pub prompt: &'a str,
    pub run_seed: u64,
    pub artifacts: Option<&'a Path>,
}

pub fn refine(
    scene: &GaussianScene,
    input: &RefineInputs,
    mut log: Option<&mut StageLog>,
) -> StageResult<(GaussianScene, Vec<CycleRecord>)> {
    let cfg = input.config;
    let schedule = cfg.schedule();
    schedule.validate().map_err(|e| StageError::Config(e.to_string()))?;
    let opt = OptimizerConfig::with_steps(cfg.opt_steps);
    let [gt_a, gt_b] = input.ground_truth;
    let mut scene = scene.clone();
    let mut records = Vec::new();
    for cycle in 1..=cfg.cycles {
        let level = schedule.level(cycle).map_err(|e| StageError::Config(e.to_string()))?;
        let dir = input.artifacts.map(|d| d.join(format!("cycle_{cycle}")));
        let renders: Vec<RenderOutput> = input.trajectory.iter().map(|v| render(&scene, v)).collect();
        let ratios: Vec<f64> = renders.iter().map(|r| detect_holes(r, cfg.hole_alpha_threshold).1).collect();
        let picked = select_views(&ratios, 2);
        let mut rec = CycleRecord {
            cycle,
            noise_level: level,
            views: Vec::new(),
            hole_ratios: Vec::new(),
            injected: 0,
            noop: true,
            skipped_tiles: Vec::new(),
        };
        if picked.len() < 2 || ratios[picked[0]] == 0.0 {
            if let Some(l) = log.as_deref_mut() {
                l.event("cycle", json!({ "cycle": cycle, "noise_level": level, "noop": true }));
            }
            records.push(rec);
            continue;
        }
        rec.noop = false;
        rec.views = picked.clone();
        rec.hole_ratios = picked.iter().map(|i| ratios[*i]).collect();
        let (ra, rb) = (&renders[picked[0]], &renders[picked[1]]);
        let grid = assemble_grid(&gt_a.image, &gt_b.image, ra, rb, cfg.hole_alpha_threshold)
            .map_err(|e| StageError::Config(e.to_string()))?;
        let seed = stream_seed(input.run_seed, &format!("refine/cycle_{cycle}/grid_inpaint"));
        let inpainted = input.clients.grid_inpaint.grid_inpaint(
            &grid.image,
            &grid.mask,
            input.prompt,
            level,
            cfg.denoise_passes,
            seed,
        )?;
        if !inpainted.same_dims(&grid.image) {
            return Err(ClientError {
                stage: "grid_inpaint".into(),
                detail: "returned grid differs in size".into(),
            }
            .into());
        }
        if let Some(l) = log.as_deref_mut() {
            let anchor_masked = GridLayout::ORDER.iter().filter(|s| s.is_anchor()).any(|s| {
                let (x0, y0) = grid.layout.origin(*s);
                grid.mask.crop(x0, y0, grid.layout.tile_width, grid.layout.tile_height).count() > 0
            });
            l.event(
                "grid_inpaint",
                json!({
                    "cycle": cycle,
                    "noise_level": level,
                    "denoise_passes": cfg.denoise_passes,
                    "views": picked,
                    "masked_pixels": grid.mask.count(),
                    "anchor_tiles_masked": anchor_masked,
                }),
            );
        }
        let tiles = disassemble_grid(&inpainted, &grid.layout).map_err(|e| StageError::Config(e.to_string()))?;
        if let Some(d) = &dir {
            image::save_rgb(&grid.image, &d.join("grid.png"))?;
            image::save_mask(&grid.mask, &d.join("mask.png"))?;
            image::save_rgb(&inpainted, &d.join("inpainted_grid.png"))?;
            for (k, t) in tiles.iter().enumerate() {
                image::save_rgb(t, &d.join("tiles").join(format!("tile_{k}.png")))?;
            }
        }
        let mut added: Vec<GaussianPrimitive> = Vec::new();
        let mut targets: Vec<Target> = input.ground_truth.to_vec();
        let mut alignments = Vec::new();
        for (slot, source) in [TileSource::NovelA, TileSource::NovelB].into_iter().enumerate() {
            let idx = picked[slot];
            let view = input.trajectory[idx];
            let out = &renders[idx];
            let (x0, y0) = grid.layout.origin(source);
            let hole = grid.mask.crop(x0, y0, grid.layout.tile_width, grid.layout.tile_height);
            let tile = &tiles[GridLayout::ORDER.iter().position(|s| *s == source).unwrap()];
            let stream = |op: &str| stream_seed(input.run_seed, &format!("refine/cycle_{cycle}/tile_{slot}/{op}"));
            let up = input.clients.upscale.upscale(tile, cfg.upscale_factor, stream("upscale"))?;
            let enhanced = imgops::resize_area(&up, tile.width(), tile.height());
            let depth = input.clients.depth.depth(&enhanced, Some(&view), stream("depth"))?;
            if let Some(d) = &dir {
                crate::formats::depth::save(&depth, &d.join(format!("tile_{slot}_depth.dpth")))?;
            }
            targets.push(Target::new(view, enhanced.clone()));
            if hole.count() == 0 {
                continue;
            }
            let lifted = affine_align(&depth, &out.depth, &valid_depth_mask(out))
                .map_err(|e| e.to_string())
                .and_then(|a| {
                    alignments.push(json!({ "view": idx, "scale": a.scale, "shift": a.shift,
                        "inlier_count": a.inlier_count, "rms_residual": a.rms_residual }));
                    unproject_masked(&enhanced, &depth, &a, &hole, &view, cfg.lift_stride).map_err(|e| e.to_string())
                });
            match lifted {
                Ok(p) => added.extend(p),
                Err(e) => rec.skipped_tiles.push(format!("view {idx}: {e}")),
            }
        }
        scene = merge(&scene, &added, Provenance::Refinement);
        rec.injected = added.len();
        let fit = optimize(&scene, &targets, &opt)?;
        scene = fit.scene;
        if let Some(d) = &dir {
            formats::write_json(&d.join("alignment.json"), &alignments)?;
            let mut csv = String::from("step,loss\n");
            for (k, l) in fit.losses.iter().enumerate() {
                csv.push_str(&format!("{k},{l}\n"));
            }
            crate::formats::write(&d.join("loss.csv"), csv.as_bytes())?;
        }
        if let Some(l) = log.as_deref_mut() {
            l.event(
                "cycle",
                json!({
                    "cycle": cycle,
                    "noise_level": level,
                    "noop": false,
                    "views": rec.views,
                    "hole_ratios": rec.hole_ratios,
                    "injected": rec.injected,
                    "opt_steps": opt.steps,
                    "skipped_tiles": rec.skipped_tiles,
                }),
            );
        }
        records.push(rec);
    }
    Ok((scene, records))
}

pub fn run(ctx: &mut RunContext) -> StageResult<()> {
    let r = body(ctx);
    guard(ctx, "refine", r)
}

fn body(ctx: &mut RunContext) -> StageResult<()> {
    let scene = ctx.load_scene("mcs/scene.ply")?;
    let prompt = std::fs::read_to_string(ctx.require("bridge/prompt.txt")?)
        .map_err(|e| FormatError::io(&ctx.path("bridge/prompt.txt"), e))?;
    let anchors = ctx.anchor_targets()?;
    let ground_truth: [Target; 2] = [anchors[0].clone(), anchors[1].clone()];
    let traj = ctx.trajectory()?;
    ctx.save_config()?;
    let clients = ctx.clients()?;
    let cfg = ctx.cfg.refine.clone();
    let mut log = StageLog::create(&ctx.dir, "refine")?;
    let schedule = cfg.schedule();
    let levels: Vec<f64> = (1..=cfg.cycles).filter_map(|c| schedule.level(c).ok()).collect();
    log.event(
        "config",
        json!({
            "cycles": cfg.cycles,
            "noise_start": cfg.noise_start,
            "noise_end": cfg.noise_end,
            "noise_levels": levels,
            "denoise_passes": cfg.denoise_passes,
            "opt_steps": cfg.opt_steps,
            "upscale_factor": cfg.upscale_factor,
        }),
    );
    let dir = ctx.path(REFINE_DIR);
    let input = RefineInputs {
        clients: &clients,
        config: &cfg,
        ground_truth: &ground_truth,
        trajectory: &traj,
        prompt: &prompt,
        run_seed: ctx.cfg.seed,
        artifacts: Some(&dir),
    };
    let (scene, records) = refine(&scene, &input, Some(&mut log))?;
    formats::write_json(&dir.join("cycles.json"), &records)?;
    ply::save(&scene, &dir.join("scene.ply"))?;
    log.event(
        "done",
        json!({ "primitives": scene.len(), "refinement_primitives": scene.count_tagged(Provenance::Refinement) }),
    );
    ctx.write_timing(REFINE_DIR, log.elapsed_seconds())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_selection_prefers_holes_then_low_index() {
        assert_eq!(select_views(&[0.1, 0.5, 0.5, 0.2], 2), vec![1, 2]);
        assert_eq!(select_views(&[0.0, 0.0, 0.0], 2), vec![0, 1]);
        assert_eq!(select_views(&[0.3], 2), vec![0]);
    }
}
