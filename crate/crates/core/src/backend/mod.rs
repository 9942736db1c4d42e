//! Backend contracts for the four capabilities the harness consumes
//! (text-to-image, image-to-text, embedding, detection) plus the local and
//! HTTP implementations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub mod hash_embed;
pub mod http;
pub mod image_io;
pub mod mock;
pub mod replay;
pub mod synthetic;

pub use hash_embed::HashEmbedder;
pub use http::{HttpBackend, RetryPolicy};
pub use mock::MockBackend;
pub use replay::ReplayBackend;
pub use synthetic::{synthetic_step, PlaneMode, RotationPlane, SyntheticBackend, SyntheticConfig};

pub type Meta = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        ImageSize { width, height }
    }
}

impl fmt::Display for ImageSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    /// PNG bytes at the requested size.
    pub png: Vec<u8>,
    pub meta: Meta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedText {
    pub text: String,
    pub meta: Meta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Text,
    Image,
}

#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

impl Payload<'_> {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Text(_) => PayloadKind::Text,
            Payload::Image(_) => PayloadKind::Image,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        match self {
            Payload::Text(t) => t.as_bytes(),
            Payload::Image(b) => b,
        }
    }
}

/// A unified model as seen by the chain engine: one image generator and one
/// captioner behind a single model identity.
pub trait ModelBackend: Send + Sync {
    fn model_id(&self) -> &str;

    fn version(&self) -> Option<String> {
        None
    }

    fn t2i(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage>;

    fn i2t(&self, image: &[u8], instruction: &str) -> Result<GeneratedText>;
}

pub trait Embedder: Send + Sync {
    /// Returns a unit-norm vector of the backbone's fixed dimension.
    fn embed(&self, payload: Payload<'_>, backbone: &str) -> Result<Vec<f64>>;
}

pub trait Detector: Send + Sync {
    /// Detections are returned unsorted; every label is one of `queries`.
    fn detect(&self, image: &[u8], queries: &[String]) -> Result<Vec<Detection>>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn version(&self) -> Option<String> {
        (**self).version()
    }
    fn t2i(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage> {
        (**self).t2i(prompt, seed, size)
    }
    fn i2t(&self, image: &[u8], instruction: &str) -> Result<GeneratedText> {
        (**self).i2t(image, instruction)
    }
}

/// Architecture families of unified models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    SharedWeights,
    PartiallyShared,
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub model_id: String,
    pub family: ModelFamily,
    pub param_count: String,
    pub native_resolution: ImageSize,
    pub endpoint: String,
}

impl BackendProfile {
    /// Metadata for the models the harness was designed around. Endpoints are
    /// left as local tags; deployments override them in config.
    pub fn known_models() -> Vec<BackendProfile> {
        use ModelFamily::*;
        let p = |id: &str, family, params: &str, res: u32| BackendProfile {
            model_id: id.to_owned(),
            family,
            param_count: params.to_owned(),
            native_resolution: ImageSize::new(res, res),
            endpoint: format!("local:{id}"),
        };
        vec![
            p("bagel", PartiallyShared, "14B MoT (7B active)", 1024),
            p("show-o", SharedWeights, "1.3B", 512),
            p("janus-1.3b", PartiallyShared, "1.3B", 1024),
            p("janus-pro-7b", PartiallyShared, "7B", 1024),
            p("vila-u", SharedWeights, "7B", 256),
            p("blip3o", PartiallyShared, "4B", 1024),
            p("llava-1.5+sdxl", Decoupled, "7B + 3.5B", 1024),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// `(x0, y0, x1, y1)` normalized to `[0, 1]`.
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub label: String,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: [f64; 4], label: impl Into<String>, confidence: f64) -> Result<Self> {
        let det = Detection { bbox, label: label.into(), confidence };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox;
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.bbox.iter().all(|&v| in_unit(v)) && x0 < x1 && y0 < y1) {
            return Err(Error::Protocol(format!("invalid box {:?} for `{}`", self.bbox, self.label)));
        }
        if !in_unit(self.confidence) {
            return Err(Error::Protocol(format!(
                "confidence {} for `{}` outside [0, 1]",
                self.confidence, self.label
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.bbox;
        (x1 - x0) * (y1 - y0)
    }

    pub fn centroid(&self) -> (f64, f64) {
        let [x0, y0, x1, y1] = self.bbox;
        ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }
}

/// Checks a detector response against the query list and value ranges.
pub fn validate_detections(dets: &[Detection], queries: &[String]) -> Result<()> {
    for d in dets {
        d.validate()?;
        if !queries.iter().any(|q| q == &d.label) {
            return Err(Error::Protocol(format!("detector returned unrequested label `{}`", d.label)));
        }
    }
    Ok(())
}

/// L2-normalizes an embedding after checking it against the backbone's
/// declared dimension.
pub fn normalize_embedding(mut v: Vec<f64>, expected_dim: Option<usize>) -> Result<Vec<f64>> {
    if let Some(dim) = expected_dim {
        if v.len() != dim {
            return Err(Error::Protocol(format!("embedding has dimension {}, backbone declares {dim}", v.len())));
        }
    }
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Protocol("embedding is empty or non-finite".into()));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Protocol("embedding is the zero vector".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Removes trailing whitespace and rejects empty captions.
pub fn clean_caption(text: &str) -> Result<String> {
    let trimmed = text.trim_end();
    if trimmed.trim_start().is_empty() {
        return Err(Error::Protocol("backend returned an empty caption".into()));
    }
    Ok(trimmed.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_ranges_are_enforced() {
        assert!(Detection::new([0.1, 0.1, 0.5, 0.5], "dog", 0.9).is_ok());
        assert!(matches!(Detection::new([0.1, 0.1, 0.5, 0.5], "dog", 1.2), Err(Error::Protocol(_))));
        assert!(matches!(Detection::new([0.5, 0.1, 0.1, 0.5], "dog", 0.5), Err(Error::Protocol(_))));
    }

    #[test]
    fn unrequested_labels_are_rejected() {
        let d = vec![Detection::new([0.0, 0.0, 1.0, 1.0], "cat", 0.5).unwrap()];
        assert!(validate_detections(&d, &["dog".into()]).is_err());
        assert!(validate_detections(&d, &["cat".into()]).is_ok());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let v = normalize_embedding(vec![3.0, 4.0], Some(2)).unwrap();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-6);
        assert!(matches!(normalize_embedding(vec![1.0], Some(2)), Err(Error::Protocol(_))));
        assert!(normalize_embedding(vec![0.0, 0.0], None).is_err());
    }

    #[test]
    fn captions_are_trimmed_and_nonempty() {
        assert_eq!(clean_caption("a dog  \n").unwrap(), "a dog");
        assert!(clean_caption("   ").is_err());
        assert!(clean_caption("").is_err());
    }
}
