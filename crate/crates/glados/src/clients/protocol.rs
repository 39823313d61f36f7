//! Wire format shared by the remote client and any compatible server.
//!
//! Requests are `POST /v1/<operator>` with a JSON body carrying `"v"` (the
//! protocol version), `"seed"`, and operator fields. Images travel as base64
//! PNG (8-bit RGB), masks as base64 PNG (8-bit gray, 0/255), depth maps as
//! base64 `DPTH`. `/v1/pointmaps` answers with a raw `PPMP` body
//! (`application/octet-stream`); every other operator answers JSON carrying
//! `"v"`, `"backend"`, `"latency_ms"`, and its result fields. Failures use a
//! non-2xx status with a `{"code", "message"}` body.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use glados_core::{DepthMap, Mask, RgbImage};
use serde::{Deserialize, Serialize};

use crate::formats::{depth, image};
use crate::formats::pose::PoseRecord;

pub const VERSION: u32 = 1;

pub fn encode_image(img: &RgbImage) -> String {
    STANDARD.encode(image::encode_rgb(img))
}

pub fn encode_mask(mask: &Mask) -> String {
    STANDARD.encode(image::encode_mask(mask))
}

pub fn encode_depth(d: &DepthMap) -> String {
    STANDARD.encode(depth::encode(d))
}

fn bytes(field: &str, text: &str) -> Result<Vec<u8>, String> {
    STANDARD.decode(text).map_err(|e| format!("{field}: invalid base64: {e}"))
}

pub fn decode_image(field: &str, text: &str) -> Result<RgbImage, String> {
    image::decode_rgb(&bytes(field, text)?, Path::new(field)).map_err(|e| e.to_string())
}

pub fn decode_mask(field: &str, text: &str) -> Result<Mask, String> {
    image::decode_mask(&bytes(field, text)?, Path::new(field)).map_err(|e| e.to_string())
}

pub fn decode_depth(field: &str, text: &str) -> Result<DepthMap, String> {
    depth::decode(&bytes(field, text)?, Path::new(field)).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Fields common to every JSON response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    pub backend: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRequest {
    pub v: u32,
    pub seed: u64,
    pub image_a: String,
    pub image_b: String,
    pub meta_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptResponse {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub v: u32,
    pub seed: u64,
    pub image_a: String,
    pub image_b: String,
    pub prompt: String,
}

/// Response of every operator returning a single image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub v: u32,
    pub seed: u64,
    pub candidates: Vec<String>,
    pub image_a: String,
    pub image_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointmapsRequest {
    pub v: u32,
    pub seed: u64,
    pub image_i: String,
    pub image_j: String,
    pub view_i: u32,
    pub view_j: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InpaintRequest {
    pub v: u32,
    pub seed: u64,
    pub image: String,
    pub mask: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthRequest {
    pub v: u32,
    pub seed: u64,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthResponse {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyRequest {
    pub v: u32,
    pub seed: u64,
    pub images: Vec<String>,
    pub noise_steps: usize,
    pub total_steps: usize,
    /// Always false: the consistency model runs without classifier-free
    /// guidance.
    pub guidance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResponse {
    #[serde(flatten)]
    pub envelope: Envelope,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInpaintRequest {
    pub v: u32,
    pub seed: u64,
    pub image: String,
    pub mask: String,
    pub prompt: String,
    pub noise_level: f64,
    pub denoise_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpscaleRequest {
    pub v: u32,
    pub seed: u64,
    pub image: String,
    pub factor: usize,
}
