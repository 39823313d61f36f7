#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use glados::clients::protocol::*;
use glados::clients::*;
use glados::config::RunConfig;
use glados::formats::pointmap;
use glados_core::synth::SyntheticSceneSpec;

pub struct Reply {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(status: u16, value: &impl serde::Serialize) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: serde_json::to_vec(value).unwrap(),
        }
    }

    pub fn error(status: u16, code: &str, message: &str) -> Self {
        Self::json(
            status,
            &ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        )
    }
}

pub type Handler = dyn Fn(&str, &str, &[u8]) -> Reply + Send + Sync;

/// Minimal HTTP/1.1 server on an ephemeral port; one request per connection.
pub struct StubServer {
    pub base: String,
    pub requests: Arc<Mutex<Vec<(String, serde_json::Value)>>>,
}

impl StubServer {
    pub fn start(handler: Arc<Handler>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let log = log.clone();
                thread::spawn(move || serve(stream, &*handler, &log));
            }
        });
        Self { base, requests }
    }

    pub fn paths(&self) -> Vec<String> {
        self.requests.lock().unwrap().iter().map(|(p, _)| p.clone()).collect()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<(String, serde_json::Value)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let parsed = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
    log.lock().unwrap().push((path.clone(), parsed));
    let reply = handler(&method, &path, &body);
    let mut out = stream;
    let head = format!(
        "HTTP/1.1 {} X\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.status,
        reply.content_type,
        reply.body.len()
    );
    let _ = out.write_all(head.as_bytes());
    let _ = out.write_all(&reply.body);
    let _ = out.flush();
}

fn envelope() -> Envelope {
    Envelope {
        v: VERSION,
        backend: "stub".into(),
        latency_ms: 0.0,
    }
}

fn image_reply(img: &glados_core::RgbImage) -> Reply {
    Reply::json(
        200,
        &ImageResponse {
            envelope: envelope(),
            image: encode_image(img),
        },
    )
}

fn bad_request(e: impl std::fmt::Display) -> Reply {
    Reply::error(400, "bad_request", &e.to_string())
}

/// Serves every operator from `mock`, parsing requests strictly.
pub fn mock_handler(mock: MockBackend) -> Arc<Handler> {
    Arc::new(move |method: &str, path: &str, body: &[u8]| -> Reply {
        macro_rules! parse {
            ($t:ty) => {
                match serde_json::from_slice::<$t>(body) {
                    Ok(r) => r,
                    Err(e) => return bad_request(e),
                }
            };
        }
        macro_rules! img {
            ($field:expr, $name:literal) => {
                match decode_image($name, &$field) {
                    Ok(i) => i,
                    Err(e) => return bad_request(e),
                }
            };
        }
        macro_rules! call {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(e) => return Reply::error(500, "backend", &e.to_string()),
                }
            };
        }
        if method == "GET" && path == "/v1/health" {
            return Reply::json(200, &serde_json::json!({"v": VERSION, "status": "ok"}));
        }
        match path {
            "/v1/prompt" => {
                let r = parse!(PromptRequest);
                let p = call!(mock.prompt(&img!(r.image_a, "image_a"), &img!(r.image_b, "image_b"), &r.meta_prompt, r.seed));
                Reply::json(200, &PromptResponse { envelope: envelope(), prompt: p })
            }
            "/v1/generate" => {
                let r = parse!(GenerateRequest);
                image_reply(&call!(mock.generate(&img!(r.image_a, "image_a"), &img!(r.image_b, "image_b"), &r.prompt, r.seed)))
            }
            "/v1/score" => {
                let r = parse!(ScoreRequest);
                let mut cands = Vec::new();
                for c in &r.candidates {
                    cands.push(img!(c, "candidates"));
                }
                let scores = call!(mock.score(&cands, &img!(r.image_a, "image_a"), &img!(r.image_b, "image_b"), r.seed));
                Reply::json(200, &ScoreResponse { envelope: envelope(), scores })
            }
            "/v1/pointmaps" => {
                let r = parse!(PointmapsRequest);
                let pm = call!(mock.pointmaps(&img!(r.image_i, "image_i"), &img!(r.image_j, "image_j"), r.view_i, r.view_j, r.seed));
                Reply {
                    status: 200,
                    content_type: "application/octet-stream",
                    body: pointmap::encode(&pm),
                }
            }
            "/v1/inpaint" => {
                let r = parse!(InpaintRequest);
                let mask = match decode_mask("mask", &r.mask) {
                    Ok(m) => m,
                    Err(e) => return bad_request(e),
                };
                image_reply(&call!(mock.inpaint(&img!(r.image, "image"), &mask, &r.prompt, r.seed)))
            }
            "/v1/depth" => {
                let r = parse!(DepthRequest);
                let cam = match r.camera.as_ref().map(|c| c.to_view()).transpose() {
                    Ok(c) => c,
                    Err(e) => return bad_request(e),
                };
                let d = call!(mock.depth(&img!(r.image, "image"), cam.as_ref(), r.seed));
                Reply::json(200, &DepthResponse { envelope: envelope(), depth: encode_depth(&d) })
            }
            "/v1/consistency" => {
                let r = parse!(ConsistencyRequest);
                let mut imgs = Vec::new();
                for c in &r.images {
                    imgs.push(img!(c, "images"));
                }
                let out = call!(mock.rectify(&imgs, r.noise_steps, r.total_steps, r.seed));
                Reply::json(
                    200,
                    &ConsistencyResponse {
                        envelope: envelope(),
                        images: out.iter().map(encode_image).collect(),
                    },
                )
            }
            "/v1/grid_inpaint" => {
                let r = parse!(GridInpaintRequest);
                let mask = match decode_mask("mask", &r.mask) {
                    Ok(m) => m,
                    Err(e) => return bad_request(e),
                };
                image_reply(&call!(mock.grid_inpaint(
                    &img!(r.image, "image"),
                    &mask,
                    &r.prompt,
                    r.noise_level,
                    r.denoise_passes,
                    r.seed
                )))
            }
            "/v1/upscale" => {
                let r = parse!(UpscaleRequest);
                image_reply(&call!(mock.upscale(&img!(r.image, "image"), r.factor, r.seed)))
            }
            _ => Reply::error(404, "not_found", path),
        }
    })
}

/// A quick synthetic spec: few primitives, small images.
pub fn small_spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed,
        primitive_count: 1500,
        width: 32,
        height: 32,
        ..SyntheticSceneSpec::default()
    }
}

/// A configuration that keeps every stage short, for tests that run the
/// whole pipeline several times.
pub fn fast_config(out: &Path, seed: u64) -> RunConfig {
    let mut cfg: RunConfig = toml::from_str(&format!(
        r#"
        seed = {seed}
        mock = true
        out = "{}"
        trajectory_n = 20
        [synth]
        width = 32
        height = 32
        primitive_count = 1500
        [expand]
        subsample = 5
        inject_opt_steps = 8
        mcs_views = 4
        mcs_resolution = [64, 64]
        mcs_opt_steps = 8
        [refine]
        cycles = 2
        opt_steps = 8
        "#,
        out.display()
    ))
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, toml::to_string(cfg).unwrap()).unwrap();
}
