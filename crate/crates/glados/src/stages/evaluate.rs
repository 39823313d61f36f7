//! Evaluation: photometric error on the inputs, trajectory coverage, frame
//! export, failure detection, and report aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use glados_core::coverage::{detect_holes, mean_alpha};
use glados_core::metrics::{detect_failure, photometric_error, RunRecord};
use glados_core::{render, Provenance};
use serde_json::json;

use super::reconstruct::{parse_failure, ReconstructStatus};
use super::*;
use crate::runlog::StageLog;

/// Contents of `eval/report.json`. When `failed` is set every metric field
/// is absent. Wall-clock timings live in `eval/timings.json` so this file is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scene_id: String,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photo_error_per_view: Option<[f64; 2]>,
    /// Inputs whose render had no valid-depth pixel (their error is the 1.0
    /// sentinel).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_valid_views: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_hole_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_trajectory_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primitives: Option<BTreeMap<String, usize>>,
    pub n_trajectory: usize,
    pub frames_manifest: Vec<String>,
}

pub fn frame_name(k: usize) -> String {
    format!("frames/frame_{:04}.png", k + 1)
}

/// FNV-1a over both input images' pixel bytes: a stable scene identifier
/// independent of file locations.
pub fn scene_id(inputs: &[RgbImage; 2]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for img in inputs {
        for b in image::encode_rgb(img) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("scene-{h:016x}")
}

fn failed_report(scene_id: String, n: usize, reason: Option<String>) -> EvaluationReport {
    EvaluationReport {
        scene_id,
        failed: true,
        reason,
        photo_error: None,
        photo_error_per_view: None,
        zero_valid_views: None,
        mean_hole_ratio: None,
        mean_trajectory_alpha: None,
        primitives: None,
        n_trajectory: n,
        frames_manifest: Vec::new(),
    }
}

/// Scores `scene` against the two inputs and along `trajectory`. Frames are
/// written under `frames_dir` when given.
pub fn evaluate_scene(
    scene_id: String,
    scene: &GaussianScene,
    ground_truth: &[Target; 2],
    trajectory: &[CameraView],
    hole_alpha_threshold: f64,
    base_record: RunRecord,
    frames_dir: Option<&Path>,
) -> StageResult<EvaluationReport> {
    let errors = ground_truth
        .each_ref()
        .map(|t| photometric_error(scene, &t.view, &t.image));
    let mut hole_sum = 0.0;
    let mut alpha_sum = 0.0;
    let mut manifest = Vec::with_capacity(trajectory.len());
    for (k, view) in trajectory.iter().enumerate() {
        let out = render(scene, view);
        hole_sum += detect_holes(&out, hole_alpha_threshold).1;
        alpha_sum += mean_alpha(&out);
        let name = frame_name(k);
        if let Some(d) = frames_dir {
            image::save_rgb(&out.rgb, &d.join(&name))?;
        }
        manifest.push(name);
    }
    let n = trajectory.len().max(1) as f64;
    let record = RunRecord {
        final_primitives: Some(scene.len()),
        mean_trajectory_alpha: Some(alpha_sum / n),
        ..base_record
    };
    let verdict = detect_failure(&record);
    if verdict.failed {
        return Ok(failed_report(scene_id, trajectory.len(), verdict.reason));
    }
    let primitives = Provenance::ALL
        .iter()
        .map(|p| (p.as_str().to_string(), scene.count_tagged(*p)))
        .chain([("total".to_string(), scene.len())])
        .collect();
    Ok(EvaluationReport {
        scene_id,
        failed: false,
        reason: None,
        photo_error: Some(0.5 * (errors[0].value + errors[1].value)),
        photo_error_per_view: Some([errors[0].value, errors[1].value]),
        zero_valid_views: Some(errors.iter().filter(|e| e.no_valid_pixels).count()),
        mean_hole_ratio: Some(hole_sum / n),
        mean_trajectory_alpha: record.mean_trajectory_alpha,
        primitives: Some(primitives),
        n_trajectory: trajectory.len(),
        frames_manifest: manifest,
    })
}

/// Per-metric means over non-failed reports plus the failure count.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<EvaluationReport>,
    pub failures: usize,
    pub mean_photo_error: Option<f64>,
    pub mean_hole_ratio: Option<f64>,
}

pub fn aggregate(reports: &[EvaluationReport]) -> Summary {
    let ok: Vec<&EvaluationReport> = reports.iter().filter(|r| !r.failed).collect();
    let mean = |f: fn(&EvaluationReport) -> Option<f64>| {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Summary {
        rows: reports.to_vec(),
        failures: reports.len() - ok.len(),
        mean_photo_error: mean(|r| r.photo_error),
        mean_hole_ratio: mean(|r| r.mean_hole_ratio),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl Summary {
    /// One row per scene, then a `mean` row; empty input gives the header only.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene_id,failed,photo_error,mean_hole_ratio\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.scene_id, r.failed, cell(r.photo_error), cell(r.mean_hole_ratio));
        }
        if !self.rows.is_empty() {
            let _ = writeln!(
                s,
                "mean,{},{},{}",
                self.failures,
                cell(self.mean_photo_error),
                cell(self.mean_hole_ratio)
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut rows: Vec<[String; 4]> = vec![["scene".into(), "failed".into(), "photo".into(), "hole_ratio".into()]];
        for r in &self.rows {
            rows.push([
                r.scene_id.clone(),
                if r.failed { "yes".into() } else { "no".into() },
                cell(r.photo_error),
                cell(r.mean_hole_ratio),
            ]);
        }
        if !self.rows.is_empty() {
            rows.push([
                "mean".into(),
                format!("{} failed", self.failures),
                cell(self.mean_photo_error),
                cell(self.mean_hole_ratio),
            ]);
        }
        let widths: Vec<usize> = (0..4).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut s = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}

/// Evaluation inputs gathered from a run directory's earlier stages.
fn run_record(ctx: &RunContext) -> StageResult<RunRecord> {
    let mut record = RunRecord::default();
    let status = ctx.path("reconstruct/status.json");
    if status.exists() {
        let s: ReconstructStatus = formats::read_json(&status)?;
        record.alignment_failure = s.alignment_failure.as_deref().and_then(parse_failure);
    }
    let client = ctx.path(CLIENT_ERROR_FILE);
    if client.exists() {
        let f: ClientFailure = formats::read_json(&client)?;
        record.client_error_stage = Some(f.stage);
        record.client_error_operator = Some(f.operator);
    }
    Ok(record)
}

fn write_report(ctx: &RunContext, report: &EvaluationReport) -> StageResult<()> {
    let dir = ctx.path(EVAL_DIR);
    formats::write_json(&dir.join("report.json"), report)?;
    formats::write(&dir.join("summary.csv"), aggregate(std::slice::from_ref(report)).to_csv().as_bytes())?;
    let mut timings = BTreeMap::new();
    for stage in [BRIDGE_DIR, RECONSTRUCT_DIR, EXPAND_DIR, MCS_DIR, REFINE_DIR] {
        let p = ctx.path(stage).join("timing.json");
        if p.exists() {
            let v: serde_json::Value = formats::read_json(&p)?;
            timings.insert(stage.to_string(), v["seconds"].clone());
        }
    }
    formats::write_json(&dir.join("timings.json"), &timings)?;
    Ok(())
}

/// Writes a failed report for a run that stopped early. Returns the reason.
pub fn report_failure(ctx: &RunContext) -> StageResult<Option<String>> {
    let record = run_record(ctx)?;
    let id = ctx.inputs().map(|i| scene_id(&i)).unwrap_or_else(|_| "unknown".into());
    let reason = detect_failure(&record).reason;
    write_report(ctx, &failed_report(id, ctx.cfg.trajectory_n, reason.clone()))?;
    Ok(reason)
}

/// Evaluates the refined scene. A failed verdict still writes the report and
/// then returns `StageError::Reconstruction`.
pub fn run(ctx: &mut RunContext) -> StageResult<EvaluationReport> {
    let record = run_record(ctx)?;
    if record.alignment_failure.is_some() || record.client_error_stage.is_some() {
        let reason = report_failure(ctx)?;
        return Err(StageError::Reconstruction(reason.unwrap_or_default()));
    }
    let scene = ctx.load_scene("refine/scene.ply")?;
    let anchors = ctx.anchor_targets()?;
    let ground_truth: [Target; 2] = [anchors[0].clone(), anchors[1].clone()];
    let traj = ctx.trajectory()?;
    let id = scene_id(&ctx.inputs()?);
    let mut log = StageLog::create(&ctx.dir, "evaluate")?;
    log.event(
        "config",
        json!({ "trajectory_n": traj.len(), "hole_alpha_threshold": ctx.cfg.evaluate.hole_alpha_threshold }),
    );
    let frames = ctx.path(EVAL_DIR);
    let report = evaluate_scene(
        id,
        &scene,
        &ground_truth,
        &traj,
        ctx.cfg.evaluate.hole_alpha_threshold,
        record,
        ctx.cfg.evaluate.export_frames.then_some(frames.as_path()),
    )?;
    write_report(ctx, &report)?;
    log.event(
        "report",
        json!({
            "failed": report.failed,
            "reason": report.reason,
            "photo_error": report.photo_error,
            "mean_hole_ratio": report.mean_hole_ratio,
            "frames": report.frames_manifest.len(),
        }),
    );
    if report.failed {
        return Err(StageError::Reconstruction(report.reason.clone().unwrap_or_default()));
    }
    Ok(report)
}
