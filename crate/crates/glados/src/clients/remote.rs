//! HTTP client for a prior-model server.

use std::io::Read;
use std::path::Path;
use std::time::Duration;

use glados_core::align::PairPointmap;
use glados_core::{CameraView, DepthMap, Mask, RgbImage};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::*;
use super::*;
use crate::formats::pointmap;
use crate::formats::pose::PoseRecord;

const TIMEOUT: Duration = Duration::from_secs(600);

pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
}

impl RemoteClient {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(TIMEOUT).build(),
        }
    }

    fn url(&self, op: Operator) -> String {
        format!("{}/v1/{}", self.base, op.as_str())
    }

    fn post(&self, op: Operator, body: &impl Serialize) -> ClientResult<ureq::Response> {
        match self.agent.post(&self.url(op)).send_json(body) {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(status, r)) => {
                let detail = match r.into_json::<ErrorBody>() {
                    Ok(e) => format!("HTTP {status} {}: {}", e.code, e.message),
                    Err(_) => format!("HTTP {status}"),
                };
                Err(ClientError::new(op, detail))
            }
            Err(e) => Err(ClientError::new(op, e.to_string())),
        }
    }

    fn call<T: DeserializeOwned>(&self, op: Operator, body: &impl Serialize) -> ClientResult<T> {
        let resp = self.post(op, body)?;
        let text = resp
            .into_string()
            .map_err(|e| ClientError::new(op, format!("reading response: {e}")))?;
        let env: Envelope = serde_json::from_str(&text)
            .map_err(|e| ClientError::new(op, format!("response envelope: {e}")))?;
        if env.v != VERSION {
            return Err(ClientError::new(op, format!("protocol version {} (expected {VERSION})", env.v)));
        }
        serde_json::from_str(&text).map_err(|e| ClientError::new(op, format!("response body: {e}")))
    }

    fn image(&self, op: Operator, body: &impl Serialize) -> ClientResult<RgbImage> {
        let r: ImageResponse = self.call(op, body)?;
        decode_image("image", &r.image).map_err(|e| ClientError::new(op, e))
    }

    /// `GET /v1/health` succeeds.
    pub fn health(&self) -> ClientResult<()> {
        self.agent
            .get(&format!("{}/v1/health", self.base))
            .call()
            .map(|_| ())
            .map_err(|e| ClientError {
                stage: "health".into(),
                detail: e.to_string(),
            })
    }
}

impl PromptEngine for RemoteClient {
    fn prompt(&self, a: &RgbImage, b: &RgbImage, meta_prompt: &str, seed: u64) -> ClientResult<String> {
        let body = PromptRequest {
            v: VERSION,
            seed,
            image_a: encode_image(a),
            image_b: encode_image(b),
            meta_prompt: meta_prompt.to_string(),
        };
        Ok(self.call::<PromptResponse>(Operator::Prompt, &body)?.prompt)
    }
}

impl Generator for RemoteClient {
    fn generate(&self, a: &RgbImage, b: &RgbImage, prompt: &str, seed: u64) -> ClientResult<RgbImage> {
        let body = GenerateRequest {
            v: VERSION,
            seed,
            image_a: encode_image(a),
            image_b: encode_image(b),
            prompt: prompt.to_string(),
        };
        self.image(Operator::Generate, &body)
    }
}

impl Evaluator for RemoteClient {
    fn score(&self, candidates: &[RgbImage], a: &RgbImage, b: &RgbImage, seed: u64) -> ClientResult<Vec<f64>> {
        let body = ScoreRequest {
            v: VERSION,
            seed,
            candidates: candidates.iter().map(encode_image).collect(),
            image_a: encode_image(a),
            image_b: encode_image(b),
        };
        let r: ScoreResponse = self.call(Operator::Score, &body)?;
        if r.scores.len() != candidates.len() {
            return Err(ClientError::new(
                Operator::Score,
                format!("{} scores for {} candidates", r.scores.len(), candidates.len()),
            ));
        }
        Ok(r.scores)
    }
}

impl Geometry for RemoteClient {
    fn pointmaps(&self, image_i: &RgbImage, image_j: &RgbImage, view_i: u32, view_j: u32, seed: u64)
        -> ClientResult<PairPointmap> {
        let op = Operator::Pointmaps;
        let body = PointmapsRequest {
            v: VERSION,
            seed,
            image_i: encode_image(image_i),
            image_j: encode_image(image_j),
            view_i,
            view_j,
        };
        let mut bytes = Vec::new();
        self.post(op, &body)?
            .into_reader()
            .read_to_end(&mut bytes)
            .map_err(|e| ClientError::new(op, format!("reading response: {e}")))?;
        let pm = pointmap::decode(&bytes, Path::new("response")).map_err(|e| ClientError::new(op, e.to_string()))?;
        if (pm.view_i, pm.view_j) != (view_i, view_j) {
            return Err(ClientError::new(op, "response is for a different pair"));
        }
        Ok(pm)
    }
}

impl Inpainter for RemoteClient {
    fn inpaint(&self, image: &RgbImage, mask: &Mask, prompt: &str, seed: u64) -> ClientResult<RgbImage> {
        let body = InpaintRequest {
            v: VERSION,
            seed,
            image: encode_image(image),
            mask: encode_mask(mask),
            prompt: prompt.to_string(),
        };
        self.image(Operator::Inpaint, &body)
    }
}

impl DepthEstimator for RemoteClient {
    fn depth(&self, image: &RgbImage, camera: Option<&CameraView>, seed: u64) -> ClientResult<DepthMap> {
        let body = DepthRequest {
            v: VERSION,
            seed,
            image: encode_image(image),
            camera: camera.map(PoseRecord::from),
        };
        let r: DepthResponse = self.call(Operator::Depth, &body)?;
        decode_depth("depth", &r.depth).map_err(|e| ClientError::new(Operator::Depth, e))
    }
}

impl Consistency for RemoteClient {
    fn rectify(&self, images: &[RgbImage], noise_steps: usize, total_steps: usize, seed: u64)
        -> ClientResult<Vec<RgbImage>> {
        let op = Operator::Consistency;
        let body = ConsistencyRequest {
            v: VERSION,
            seed,
            images: images.iter().map(encode_image).collect(),
            noise_steps,
            total_steps,
            guidance: false,
        };
        let r: ConsistencyResponse = self.call(op, &body)?;
        if r.images.len() != images.len() {
            return Err(ClientError::new(op, "batch size changed"));
        }
        r.images
            .iter()
            .map(|s| decode_image("images", s).map_err(|e| ClientError::new(op, e)))
            .collect()
    }
}

impl GridInpainter for RemoteClient {
    fn grid_inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        prompt: &str,
        noise_level: f64,
        denoise_passes: usize,
        seed: u64,
    ) -> ClientResult<RgbImage> {
        let body = GridInpaintRequest {
            v: VERSION,
            seed,
            image: encode_image(image),
            mask: encode_mask(mask),
            prompt: prompt.to_string(),
            noise_level,
            denoise_passes,
        };
        self.image(Operator::GridInpaint, &body)
    }
}

impl Upscaler for RemoteClient {
    fn upscale(&self, image: &RgbImage, factor: usize, seed: u64) -> ClientResult<RgbImage> {
        let body = UpscaleRequest {
            v: VERSION,
            seed,
            image: encode_image(image),
            factor,
        };
        self.image(Operator::Upscale, &body)
    }
}
