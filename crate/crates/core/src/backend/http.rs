//! HTTP adapter for the JSON wire protocol:
//!
//! ```text
//! POST /v1/t2i    {"prompt", "seed", "width", "height"}      -> {"image_b64", "meta"}
//! POST /v1/i2t    {"image_b64", "instruction"}               -> {"text", "meta"}
//! POST /v1/embed  {"kind", "text"?, "image_b64"?, "backbone"} -> {"vector", "dim"}
//! POST /v1/detect {"image_b64", "queries"}                   -> {"detections": [{"box", "label", "confidence"}]}
//! GET  /v1/health                                            -> {"model_id", "capabilities", "version"}
//! ```
//!
//! 4xx responses are protocol errors and never retried. 5xx responses and
//! transport failures are retried with exponential backoff, then reported as
//! `BackendUnavailable`.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::image_io::normalize_png;
use super::{
    clean_caption, normalize_embedding, validate_detections, Detection, Detector, Embedder, GeneratedImage,
    GeneratedText, ImageSize, Meta, ModelBackend, Payload,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts per request, including the first.
    pub attempts: u32,
    /// Delay before the first retry; doubles for each further retry.
    pub base_delay_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay_ms: 1000, timeout_ms: 300_000 }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (1-based): 1s, 2s, 4s, ... by default.
    pub fn delay(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << (retry.saturating_sub(1)).min(20)))
    }
}

/// Counting semaphore bounding concurrent requests across all callers.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight { limit: limit.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("in-flight lock");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("in-flight lock");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("in-flight lock") -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub model_id: String,
    pub capabilities: Vec<String>,
    pub version: String,
}

#[derive(Deserialize)]
struct T2iResponse {
    image_b64: String,
    #[serde(default)]
    meta: Meta,
}

#[derive(Deserialize)]
struct I2tResponse {
    text: String,
    #[serde(default)]
    meta: Meta,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
    dim: usize,
}

#[derive(Deserialize)]
struct DetectResponse {
    detections: Vec<Detection>,
}

pub struct HttpBackend {
    base_url: String,
    model_id: String,
    version: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    in_flight: InFlight,
    declared_dims: Mutex<HashMap<String, usize>>,
}

impl HttpBackend {
    /// Adapter with a known model id; no request is made.
    pub fn new(base_url: &str, model_id: &str, retry: RetryPolicy, max_in_flight: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(retry.timeout_ms))
            .pool_max_idle_per_host(max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpBackend {
            base_url: base_url.trim_end_matches('/').to_owned(),
            model_id: model_id.to_owned(),
            version: None,
            client,
            retry,
            in_flight: InFlight::new(max_in_flight),
            declared_dims: Mutex::new(HashMap::new()),
        })
    }

    /// Adapter whose identity comes from the server's health endpoint.
    pub fn connect(base_url: &str, retry: RetryPolicy, max_in_flight: usize) -> Result<Self> {
        let mut backend = HttpBackend::new(base_url, "", retry, max_in_flight)?;
        let health = backend.health()?;
        backend.model_id = health.model_id;
        backend.version = Some(health.version);
        Ok(backend)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Pins the dimension a backbone must return.
    pub fn declare_dim(&self, backbone: &str, dim: usize) {
        self.declared_dims.lock().expect("dims lock").insert(backbone.to_owned(), dim);
    }

    pub fn health(&self) -> Result<Health> {
        let value = self.request("/v1/health", None)?;
        serde_json::from_value(value).map_err(|e| Error::Protocol(format!("/v1/health: {e}")))
    }

    fn request(&self, path: &str, body: Option<&Value>) -> Result<Value> {
        let url = format!("{}{}", self.base_url, path);
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt));
            }
            let _permit = self.in_flight.acquire();
            let req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    last = format!("{path}: {e}");
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text() {
                Ok(t) => t,
                Err(e) => {
                    last = format!("{path}: reading body: {e}");
                    continue;
                }
            };
            if status.is_server_error() {
                last = format!("{path}: HTTP {status}");
                continue;
            }
            if !status.is_success() {
                return Err(Error::Protocol(format!("{path}: HTTP {status}: {}", text.trim())));
            }
            return serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("{path}: invalid JSON: {e}")));
        }
        Err(Error::BackendUnavailable(format!("{last} (after {} attempts)", self.retry.attempts.max(1))))
    }

    fn call<T: serde::de::DeserializeOwned>(&self, path: &str, body: Value) -> Result<(T, u128)> {
        let start = Instant::now();
        let value = self.request(path, Some(&body))?;
        let parsed = serde_json::from_value(value).map_err(|e| Error::Protocol(format!("{path}: {e}")))?;
        Ok((parsed, start.elapsed().as_millis()))
    }
}

fn decode_b64(path: &str, s: &str) -> Result<Vec<u8>> {
    B64.decode(s).map_err(|e| Error::Protocol(format!("{path}: bad base64: {e}")))
}

impl ModelBackend for HttpBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn version(&self) -> Option<String> {
        self.version.clone()
    }

    fn t2i(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage> {
        if prompt.is_empty() {
            return Err(Error::Invalid("t2i prompt must be non-empty".into()));
        }
        let body = json!({"prompt": prompt, "seed": seed, "width": size.width, "height": size.height});
        let (resp, latency): (T2iResponse, _) = self.call("/v1/t2i", body)?;
        let raw = decode_b64("/v1/t2i", &resp.image_b64)?;
        let (png, native) = normalize_png(&raw, size)?;
        let mut meta = resp.meta;
        meta.insert("latency_ms".into(), json!(latency));
        if let Some(n) = native {
            meta.insert("native_width".into(), json!(n.width));
            meta.insert("native_height".into(), json!(n.height));
        }
        Ok(GeneratedImage { png, meta })
    }

    fn i2t(&self, image: &[u8], instruction: &str) -> Result<GeneratedText> {
        let body = json!({"image_b64": B64.encode(image), "instruction": instruction});
        let (resp, latency): (I2tResponse, _) = self.call("/v1/i2t", body)?;
        let mut meta = resp.meta;
        meta.insert("latency_ms".into(), json!(latency));
        Ok(GeneratedText { text: clean_caption(&resp.text)?, meta })
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, payload: Payload<'_>, backbone: &str) -> Result<Vec<f64>> {
        let body = match payload {
            Payload::Text(t) => json!({"kind": "text", "text": t, "backbone": backbone}),
            Payload::Image(b) => json!({"kind": "image", "image_b64": B64.encode(b), "backbone": backbone}),
        };
        let (resp, _): (EmbedResponse, _) = self.call("/v1/embed", body)?;
        if resp.vector.len() != resp.dim {
            return Err(Error::Protocol(format!(
                "/v1/embed: vector has {} entries but dim is {}",
                resp.vector.len(),
                resp.dim
            )));
        }
        let declared = *self.declared_dims.lock().expect("dims lock").entry(backbone.to_owned()).or_insert(resp.dim);
        normalize_embedding(resp.vector, Some(declared))
    }
}

impl Detector for HttpBackend {
    fn detect(&self, image: &[u8], queries: &[String]) -> Result<Vec<Detection>> {
        if queries.is_empty() {
            return Err(Error::Invalid("detect needs at least one query".into()));
        }
        let body = json!({"image_b64": B64.encode(image), "queries": queries});
        let (resp, _): (DetectResponse, _) = self.call("/v1/detect", body)?;
        validate_detections(&resp.detections, queries)?;
        Ok(resp.detections)
    }
}
