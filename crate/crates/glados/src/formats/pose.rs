//! Camera poses as JSON records:
//! `{"rotation":[w,x,y,z],"translation":[x,y,z],"intrinsics":[fx,fy,cx,cy],"size":[w,h]}`.
//! Rotation and translation map world to camera.

use std::path::Path;

use glados_core::{CameraView, Intrinsics, UnitQuaternion};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::FormatError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub intrinsics: [f64; 4],
    pub size: [usize; 2],
}

impl From<&CameraView> for PoseRecord {
    fn from(v: &CameraView) -> Self {
        let k = &v.intrinsics;
        Self {
            rotation: v.rotation.to_array(),
            translation: v.translation.into(),
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            size: [k.width, k.height],
        }
    }
}

impl PoseRecord {
    pub fn to_view(&self) -> Result<CameraView, String> {
        let [fx, fy, cx, cy] = self.intrinsics;
        let intrinsics = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width: self.size[0],
            height: self.size[1],
        };
        CameraView::new(
            UnitQuaternion::from_array(self.rotation),
            Vector3::from(self.translation),
            intrinsics,
        )
        .map_err(|e| e.to_string())
    }
}

pub fn to_records(views: &[CameraView]) -> Vec<PoseRecord> {
    views.iter().map(PoseRecord::from).collect()
}

pub fn save_views(views: &[CameraView], path: &Path) -> Result<(), FormatError> {
    super::write_json(path, &to_records(views))
}

pub fn load_views(path: &Path) -> Result<Vec<CameraView>, FormatError> {
    let records: Vec<PoseRecord> = super::read_json(path)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_view().map_err(|e| FormatError::malformed(path, format!("pose {i}: {e}"))))
        .collect()
}
