mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::small_spec;
use glados::clients::*;
use glados::config::{ExpandConfig, RefineConfig};
use glados::runlog::{read_events, StageLog};
use glados::stages::bridge::{bridge, select_anchor, META_PROMPT};
use glados::stages::expand::{expand, expansion_indices, ExpandInputs, Outcome};
use glados::stages::mcs::{mcs_indices, mcs_refine};
use glados::stages::refine::{refine, select_views, RefineInputs};
use glados_core::coverage::detect_holes;
use glados_core::grid::{GridLayout, TileSource};
use glados_core::optim::Target;
use glados_core::pose::evaluation_trajectory;
use glados_core::synth::{self, SyntheticBundle};
use glados_core::{render, CameraView, GaussianScene, Mask, Provenance, RgbImage};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

struct World {
    bundle: SyntheticBundle,
    mock: MockBackend,
    anchors: [Target; 2],
    trajectory: Vec<CameraView>,
}

/// Ground truth in world coordinates, with the fixture scene set so the mock
/// depth estimator sees the true geometry.
fn world(n: usize) -> World {
    let bundle = synth::generate(&small_spec(11)).unwrap();
    let mock = MockBackend::new(MockFixture {
        scene: Some(bundle.ground_truth.clone()),
        pointmaps: Default::default(),
    });
    let [a, _, b] = bundle.views;
    let anchors = [
        Target::new(a, bundle.disjoint_pair[0].1.clone()),
        Target::new(b, bundle.disjoint_pair[1].1.clone()),
    ];
    let trajectory = evaluation_trajectory(&a, &b, n).unwrap();
    World {
        bundle,
        mock,
        anchors,
        trajectory,
    }
}

/// Keeps only the primitives on one side of the room so most of the
/// trajectory sees holes.
fn half_scene(gt: &GaussianScene) -> GaussianScene {
    let keep: Vec<_> = gt.primitives().iter().filter(|p| p.mean.x < 0.0).cloned().collect();
    GaussianScene::with_tag(keep, Provenance::Coarse)
}

/// Removes a horizontal band of the room, leaving a partial hole in every
/// trajectory view.
fn banded_scene(gt: &GaussianScene) -> GaussianScene {
    let keep: Vec<_> = gt.primitives().iter().filter(|p| p.mean.y.abs() > 0.4).cloned().collect();
    GaussianScene::with_tag(keep, Provenance::Coarse)
}

struct CountingInpaint {
    inner: Arc<dyn Inpainter>,
    calls: AtomicUsize,
}

impl Inpainter for CountingInpaint {
    fn inpaint(&self, image: &RgbImage, mask: &Mask, prompt: &str, seed: u64) -> ClientResult<RgbImage> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.inpaint(image, mask, prompt, seed)
    }
}

struct RecordingGrid {
    inner: Arc<dyn GridInpainter>,
    seen: Mutex<Vec<(Mask, f64, usize)>>,
}

impl GridInpainter for RecordingGrid {
    fn grid_inpaint(&self, image: &RgbImage, mask: &Mask, prompt: &str, level: f64, passes: usize, seed: u64)
        -> ClientResult<RgbImage> {
        self.seen.lock().unwrap().push((mask.clone(), level, passes));
        self.inner.grid_inpaint(image, mask, prompt, level, passes, seed)
    }
}

fn expand_config() -> ExpandConfig {
    ExpandConfig {
        inject_opt_steps: 4,
        subsample: 4,
        ..ExpandConfig::default()
    }
}

fn indexed(traj: &[CameraView], idx: &[usize]) -> Vec<(usize, CameraView)> {
    idx.iter().map(|i| (*i, traj[*i])).collect()
}

#[test]
fn meta_prompt_is_pinned() {
    let digest = Sha256::digest(META_PROMPT.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(hex, "05153b0144d1fe6d60079162e2dcb418ed143d4e51b3ece75feac39209a00d85");
}

#[test]
fn bridge_generates_m_candidates_with_consecutive_seeds() {
    let w = world(4);
    let clients = PriorClients::mock(w.mock.clone());
    let (a, b) = (&w.bundle.disjoint_pair[0].1, &w.bundle.disjoint_pair[1].1);
    let r = bridge(a, b, &clients, 3, 100).unwrap();
    assert_eq!(r.candidates.len(), 3);
    for (k, (img, _)) in r.candidates.iter().enumerate() {
        assert_eq!(*img, w.mock.generate(a, b, &r.prompt, 100 + k as u64).unwrap());
    }
    let scores: Vec<f64> = r.candidates.iter().map(|c| c.1).collect();
    assert_eq!(r.chosen_index, select_anchor(&scores));
    assert_eq!(r.anchor_image, r.candidates[r.chosen_index].0);
    // Deterministic for a fixed seed.
    assert_eq!(bridge(a, b, &clients, 3, 100).unwrap().chosen_index, r.chosen_index);
}

#[test]
fn bridge_rejects_zero_candidates_and_mismatched_inputs() {
    let clients = PriorClients::mock(MockBackend::default());
    let a = RgbImage::filled(8, 8, [0.1; 3]);
    assert!(bridge(&a, &a, &clients, 0, 0).is_err());
    assert!(bridge(&a, &RgbImage::filled(8, 9, [0.1; 3]), &clients, 3, 0).is_err());
}

#[test]
fn anchor_selection_examples() {
    assert_eq!(select_anchor(&[0.2, 0.9, 0.5]), 1);
    assert_eq!(select_anchor(&[0.7, 0.7, 0.1]), 0);
    assert_eq!(select_anchor(&[f64::NAN, -1.0, -2.0]), 1);
    assert_eq!(select_anchor(&[3.0]), 0);
}

proptest! {
    #[test]
    fn anchor_choice_ignores_positive_rescaling(
        scores in proptest::collection::vec(-10.0f64..10.0, 1..8),
        factor in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = scores.iter().map(|s| s * factor).collect();
        prop_assert_eq!(select_anchor(&scores), select_anchor(&scaled));
    }

    #[test]
    fn refine_picks_the_largest_ratios(ratios in proptest::collection::vec(0.0f64..1.0, 2..30)) {
        let picked = select_views(&ratios, 2);
        prop_assert_eq!(picked.len(), 2);
        prop_assert!(ratios[picked[0]] >= ratios[picked[1]]);
        for (i, r) in ratios.iter().enumerate() {
            if !picked.contains(&i) {
                prop_assert!(*r <= ratios[picked[1]]);
            }
        }
    }
}

#[test]
fn visiting_orders() {
    assert_eq!(expansion_indices(200, 10), (1..=20).map(|k| 10 * k - 1).collect::<Vec<_>>());
    assert_eq!(mcs_indices(200, 8), vec![12, 37, 62, 87, 112, 137, 162, 187]);
}

#[test]
fn fully_covered_scene_never_calls_the_inpainter() {
    let w = world(12);
    for v in &w.trajectory {
        assert_eq!(detect_holes(&render(&w.bundle.ground_truth, v), 0.05).1, 0.0);
    }
    let mut clients = PriorClients::mock(w.mock.clone());
    let counter = Arc::new(CountingInpaint {
        inner: clients.inpaint.clone(),
        calls: AtomicUsize::new(0),
    });
    clients.inpaint = counter.clone();
    let cfg = expand_config();
    let views = indexed(&w.trajectory, &expansion_indices(12, 4));
    let input = ExpandInputs {
        clients: &clients,
        config: &cfg,
        views: &views,
        anchors: &w.anchors,
        prompt: "",
        run_seed: 1,
        artifacts: None,
    };
    let (scene, events) = expand(&w.bundle.ground_truth, &input, None).unwrap();
    assert_eq!(counter.calls.load(Ordering::SeqCst), 0);
    assert_eq!(scene, w.bundle.ground_truth);
    assert!(events.iter().all(|e| e.outcome == Outcome::SkippedNoHole));
}

#[test]
fn holes_are_inpainted_and_lifted_as_expansion() {
    let w = world(12);
    let coarse = half_scene(&w.bundle.ground_truth);
    let clients = PriorClients::mock(w.mock.clone());
    let cfg = expand_config();
    let views = indexed(&w.trajectory, &expansion_indices(12, 4));
    let dir = tempfile::tempdir().unwrap();
    let input = ExpandInputs {
        clients: &clients,
        config: &cfg,
        views: &views,
        anchors: &w.anchors,
        prompt: "",
        run_seed: 1,
        artifacts: Some(dir.path()),
    };
    let (scene, events) = expand(&coarse, &input, None).unwrap();
    let inpainted: Vec<_> = events.iter().filter(|e| e.outcome == Outcome::Inpainted).collect();
    assert!(!inpainted.is_empty(), "{events:?}");
    let injected: usize = inpainted.iter().map(|e| e.injected).sum();
    assert_eq!(scene.count_tagged(Provenance::Expansion), injected);
    assert_eq!(scene.count_tagged(Provenance::Coarse), coarse.len());
    let first = inpainted[0].view;
    for f in ["render.png", "mask.png", "inpainted.png", "depth.dpth", "alignment.json"] {
        assert!(dir.path().join(format!("view_{first:03}")).join(f).exists(), "{f}");
    }
    // Each visit starts from the scene left by the previous one, so a later
    // visit of the same view finds less to fill.
    let first_ratio = events[0].hole_ratio;
    let again = expand(&scene, &input, None).unwrap().1;
    assert!(again[0].hole_ratio < first_ratio);
}

#[test]
fn depth_failure_skips_the_view() {
    let w = world(12);
    let coarse = half_scene(&w.bundle.ground_truth);
    let mut mock = w.mock.clone();
    mock.failing.insert(Operator::Depth);
    let clients = PriorClients::mock(mock);
    let cfg = expand_config();
    let views = indexed(&w.trajectory, &expansion_indices(12, 4));
    let input = ExpandInputs {
        clients: &clients,
        config: &cfg,
        views: &views,
        anchors: &w.anchors,
        prompt: "",
        run_seed: 1,
        artifacts: None,
    };
    let (scene, events) = expand(&coarse, &input, None).unwrap();
    assert_eq!(scene, coarse);
    let skipped: Vec<_> = events.iter().filter(|e| e.outcome == Outcome::SkippedError).collect();
    assert!(!skipped.is_empty());
    assert!(skipped[0].detail.as_deref().unwrap().contains("depth"));
}

#[test]
fn consistency_identity_does_not_increase_loss() {
    let w = world(24);
    let coarse = half_scene(&w.bundle.ground_truth);
    let mut mock = w.mock.clone();
    mock.identity_consistency = true;
    let clients = PriorClients::mock(mock);
    let cfg = ExpandConfig {
        mcs_resolution: [64, 64],
        mcs_opt_steps: 10,
        ..ExpandConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut log = StageLog::create(dir.path(), "mcs").unwrap();
    let out = mcs_refine(&coarse, &clients, &cfg, &w.trajectory, &w.anchors, 5, None, Some(&mut log)).unwrap();
    drop(log);
    assert!(out.final_loss <= out.initial_loss, "{} > {}", out.final_loss, out.initial_loss);
    assert_eq!(out.indices, mcs_indices(24, 8));
    let events = read_events(dir.path(), "mcs").unwrap();
    let submits = events.iter().filter(|e| e["event"] == "render_submit").count();
    assert_eq!(submits, 8);
    let fit = events.iter().find(|e| e["event"] == "fit").unwrap();
    assert_eq!(fit["opt_steps"], 10);
    assert_eq!(fit["lr_mean"], 1e-4);
}

#[test]
fn covered_scene_makes_every_refine_cycle_a_noop() {
    let w = world(10);
    let clients = PriorClients::mock(w.mock.clone());
    let cfg = RefineConfig {
        opt_steps: 3,
        ..RefineConfig::default()
    };
    let input = RefineInputs {
        clients: &clients,
        config: &cfg,
        ground_truth: &w.anchors,
        trajectory: &w.trajectory,
        prompt: "",
        run_seed: 2,
        artifacts: None,
    };
    let (scene, cycles) = refine(&w.bundle.ground_truth, &input, None).unwrap();
    assert_eq!(cycles.len(), 5);
    assert!(cycles.iter().all(|c| c.noop && c.injected == 0));
    assert_eq!(scene, w.bundle.ground_truth);
}

#[test]
fn refine_fills_holes_without_masking_the_inputs() {
    let w = world(10);
    let coarse = banded_scene(&w.bundle.ground_truth);
    let mut clients = PriorClients::mock(w.mock.clone());
    let grid = Arc::new(RecordingGrid {
        inner: clients.grid_inpaint.clone(),
        seen: Mutex::new(Vec::new()),
    });
    clients.grid_inpaint = grid.clone();
    let cfg = RefineConfig {
        opt_steps: 3,
        ..RefineConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let input = RefineInputs {
        clients: &clients,
        config: &cfg,
        ground_truth: &w.anchors,
        trajectory: &w.trajectory,
        prompt: "",
        run_seed: 2,
        artifacts: Some(dir.path()),
    };
    let (scene, cycles) = refine(&coarse, &input, None).unwrap();
    assert!(!cycles[0].noop);
    assert!(scene.count_tagged(Provenance::Refinement) > 0);
    assert_eq!(scene.count_tagged(Provenance::Refinement), cycles.iter().map(|c| c.injected).sum::<usize>());

    let seen = grid.seen.lock().unwrap();
    let expected: Vec<f64> = cycles.iter().filter(|c| !c.noop).map(|c| c.noise_level).collect();
    assert_eq!(seen.iter().map(|s| s.1).collect::<Vec<_>>(), expected);
    let (w_, h_) = (w.anchors[0].image.width(), w.anchors[0].image.height());
    let layout = GridLayout {
        tile_width: w_,
        tile_height: h_,
    };
    for (mask, _, passes) in seen.iter() {
        assert_eq!(*passes, 4);
        assert_eq!(mask.dims(), (2 * w_, 2 * h_));
        for src in [TileSource::GroundTruthA, TileSource::GroundTruthB] {
            let (x0, y0) = layout.origin(src);
            assert_eq!(mask.crop(x0, y0, w_, h_).count(), 0);
        }
    }
    for f in ["grid.png", "mask.png", "inpainted_grid.png", "loss.csv", "alignment.json"] {
        assert!(dir.path().join("cycle_1").join(f).exists(), "{f}");
    }
}

#[test]
fn refine_noise_levels_follow_the_schedule() {
    let s = RefineConfig::default().schedule();
    let levels: Vec<f64> = (1..=5).map(|c| s.level(c).unwrap()).collect();
    assert_eq!(levels[0], 0.20);
    assert_eq!(levels[4], 0.0005);
    assert!((levels[2] - 0.10025).abs() < 1e-15);
    assert!(levels.windows(2).all(|p| p[0] > p[1]));
}

