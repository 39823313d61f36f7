//! Anchor-image bridging: prompt, M candidates, evaluator selection.

use glados_core::RgbImage;
use serde_json::json;

use super::*;
use crate::runlog::StageLog;

/// Meta-prompt sent to the prompt engine.
pub const META_PROMPT: &str = include_str!("../../resources/meta_prompt.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeResult {
    pub anchor_image: RgbImage,
    pub prompt: String,
    pub candidates: Vec<(RgbImage, f64)>,
    pub chosen_index: usize,
}

/// Index of the highest score; the lowest index wins ties. NaN never wins.
pub fn select_anchor(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = k;
        }
    }
    best
}

/// Generates `m` candidates with seeds `seed + k` and keeps the best-scored.
pub fn bridge(
    i1: &RgbImage,
    i2: &RgbImage,
    clients: &PriorClients,
    m: usize,
    seed: u64,
) -> StageResult<BridgeResult> {
    if !i1.same_dims(i2) {
        return Err(StageError::Config("input images differ in size".into()));
    }
    if m == 0 {
        return Err(StageError::Config("bridge needs at least one candidate".into()));
    }
    let prompt = clients
        .prompt_engine
        .prompt(i1, i2, META_PROMPT, stream_seed(seed, "bridge/prompt"))?;
    let images = (0..m as u64)
        .map(|k| clients.generator.generate(i1, i2, &prompt, seed.wrapping_add(k)))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = clients
        .evaluator
        .score(&images, i1, i2, stream_seed(seed, "bridge/score"))?;
    if scores.len() != m {
        return Err(ClientError {
            stage: "score".into(),
            detail: format!("{} scores for {m} candidates", scores.len()),
        }
        .into());
    }
    let chosen_index = select_anchor(&scores);
    Ok(BridgeResult {
        anchor_image: images[chosen_index].clone(),
        prompt,
        candidates: images.into_iter().zip(scores).collect(),
        chosen_index,
    })
}

/// Copies the inputs into the run, bridges them, and writes `bridge/`.
pub fn run(ctx: &mut RunContext) -> StageResult<()> {
    let r = body(ctx);
    guard(ctx, "bridge", r)
}

fn body(ctx: &mut RunContext) -> StageResult<()> {
    if ctx.cfg.inputs.len() != 2 {
        return Err(StageError::Config("bridge needs exactly two input images".into()));
    }
    ctx.save_config()?;
    let mut log = StageLog::create(&ctx.dir, "bridge")?;
    for (k, src) in ctx.cfg.inputs.clone().iter().enumerate() {
        if !src.exists() {
            return Err(StageError::MissingArtifact(src.clone()));
        }
        let img = image::load_rgb(src)?;
        image::save_rgb(&img, &ctx.path(INPUTS_DIR).join(format!("view{k}.png")))?;
    }
    let [i1, i2] = ctx.inputs()?;
    let clients = ctx.clients()?;
    let m = ctx.cfg.bridge.candidates;
    log.event("config", json!({ "candidates": m, "meta_prompt_bytes": META_PROMPT.len() }));
    let r = bridge(&i1, &i2, &clients, m, ctx.cfg.seed)?;
    let dir = ctx.path(BRIDGE_DIR);
    for (k, (img, score)) in r.candidates.iter().enumerate() {
        image::save_rgb(img, &dir.join(format!("candidate_{k}.png")))?;
        log.event("candidate", json!({ "index": k, "seed": ctx.cfg.seed.wrapping_add(k as u64), "score": score }));
    }
    let scores: Vec<f64> = r.candidates.iter().map(|c| c.1).collect();
    formats::write_json(&dir.join("scores.json"), &json!({ "scores": scores, "chosen_index": r.chosen_index }))?;
    formats::write(&dir.join("prompt.txt"), r.prompt.as_bytes())?;
    image::save_rgb(&r.anchor_image, &dir.join("anchor.png"))?;
    formats::write_json(
        &dir.join("expanded_set.json"),
        &json!([
            { "view": 0, "image": "inputs/view0.png" },
            { "view": 1, "image": "bridge/anchor.png" },
            { "view": 2, "image": "inputs/view1.png" },
        ]),
    )?;
    log.event("selected", json!({ "chosen_index": r.chosen_index, "candidates": m }));
    ctx.write_timing(BRIDGE_DIR, log.elapsed_seconds())?;
    Ok(())
}
