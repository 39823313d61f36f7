//! Synthetic scene bundles on disk:
//!
//! ```text
//! <dir>/gt.ply            ground-truth scene (+ gt.meta.json)
//! <dir>/views.json        cameras of view ids 0, 1, 2
//! <dir>/pair/view0.png    input image of view 0
//! <dir>/pair/view1.png    input image of view 2
//! <dir>/pair/poses.json   cameras of the two inputs
//! <dir>/pointmaps/*.ppmp  pair pointmaps
//! <dir>/spec.json         generator parameters
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use glados_core::synth::{SyntheticBundle, SyntheticSceneSpec, PAIRS};
use glados_core::{CameraView, GaussianScene};
use serde_json::json;

use crate::clients::MockFixture;
use crate::formats::{self, image, ply, pointmap, pose, FormatError};

pub fn save(bundle: &SyntheticBundle, spec: &SyntheticSceneSpec, dir: &Path) -> Result<(), FormatError> {
    ply::save(&bundle.ground_truth, &dir.join("gt.ply"))?;
    pose::save_views(&bundle.views, &dir.join("views.json"))?;
    for (k, (_, img)) in bundle.disjoint_pair.iter().enumerate() {
        image::save_rgb(img, &dir.join("pair").join(format!("view{k}.png")))?;
    }
    let pair_views: Vec<CameraView> = bundle.disjoint_pair.iter().map(|(v, _)| *v).collect();
    pose::save_views(&pair_views, &dir.join("pair/poses.json"))?;
    for pm in &bundle.pair_pointmaps {
        pointmap::save(pm, &dir.join("pointmaps").join(pointmap::file_name(pm.view_i, pm.view_j)))?;
    }
    let scales: BTreeMap<String, f64> = bundle
        .pair_scales
        .iter()
        .map(|((i, j), s)| (format!("{i}_{j}"), *s))
        .collect();
    formats::write_json(
        &dir.join("spec.json"),
        &json!({
            "seed": spec.seed,
            "layout": format!("{:?}", spec.layout).to_lowercase(),
            "texture": spec.texture.as_str(),
            "extent": [spec.extent.x, spec.extent.y, spec.extent.z],
            "primitive_count": spec.primitive_count,
            "separation_deg": spec.separation_deg,
            "size": [spec.width, spec.height],
            "fov_deg": spec.fov_deg,
            "pointmap_noise": spec.pointmap_noise,
            "pair_scales": scales,
            "scene_scale": bundle.scene_scale,
        }),
    )
}

/// Paths of the two input images.
pub fn input_paths(dir: &Path) -> [PathBuf; 2] {
    [dir.join("pair/view0.png"), dir.join("pair/view1.png")]
}

pub fn load_views(dir: &Path) -> Result<Vec<CameraView>, FormatError> {
    let views = pose::load_views(&dir.join("views.json"))?;
    if views.len() != 3 {
        return Err(FormatError::malformed(&dir.join("views.json"), "expected three cameras"));
    }
    Ok(views)
}

pub fn load_ground_truth(dir: &Path) -> Result<GaussianScene, FormatError> {
    ply::load(&dir.join("gt.ply"))
}

/// Mock fixture with the ground truth moved into the frame of camera 0,
/// which is the frame coarse alignment reconstructs in.
pub fn load_fixture(dir: &Path) -> Result<MockFixture, FormatError> {
    let views = load_views(dir)?;
    let gt = load_ground_truth(dir)?;
    let scene = gt.transformed(&views[0].rotation, &views[0].translation, 1.0);
    let mut pointmaps = BTreeMap::new();
    for (i, j) in PAIRS {
        let path = dir.join("pointmaps").join(pointmap::file_name(i, j));
        if path.exists() {
            pointmaps.insert((i, j), pointmap::load(&path)?);
        }
    }
    Ok(MockFixture {
        scene: Some(scene),
        pointmaps,
    })
}
