//! Synthetic drift channel.
//!
//! Every artifact carries a latent unit vector next to an *anchor* (the
//! origin text the chain started from). Each T2I or I2T hop rotates the
//! latent by half of `drift_rate`, so one full T2I+I2T cycle moves it by
//! `drift_rate` radians. With a fixed rotation plane the similarity of the
//! k-th same-modality artifact to the origin is exactly `cos(k * drift_rate)`,
//! which gives the metric pipeline a closed-form oracle.
//!
//! Text payloads are the bare anchor while the latent still equals the
//! anchor's origin latent, otherwise `"<anchor> [drift:<hex f64 LE>]"`.
//! Image payloads are PNGs whose bottom rows carry the same state as raw
//! bytes; the rest of the canvas renders the anchor's scene (if one is
//! registered) so the detection and color rules have real pixels to score.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::image_io::{decode, encode_png};
use super::{
    clean_caption, Detection, Detector, Embedder, GeneratedImage, GeneratedText, ImageSize, Meta, ModelBackend,
    Payload,
};
use crate::error::{Error, Result};
use crate::metrics::embed::dot;
use crate::metrics::mgg::{ColorName, Expectations, GenEvalPrompt, Relation, Task};
use crate::seed::{derive_seed, gaussian_vector, rng, uniform_below, unit_vector};

const MAGIC: &[u8; 4] = b"DRFT";
const TEXT_TAG: &str = " [drift:";

/// Rotates `latent` by `drift_rate` radians inside the plane spanned by the
/// latent and a direction drawn from `step_seed`.
pub fn synthetic_step(latent: &[f64], drift_rate: f64, step_seed: u64) -> Vec<f64> {
    if drift_rate == 0.0 {
        return latent.to_vec();
    }
    let mut w = gaussian_vector(step_seed, latent.len());
    let along = dot(&w, latent);
    w.iter_mut().zip(latent).for_each(|(wi, xi)| *wi -= along * xi);
    let n = dot(&w, &w).sqrt();
    w.iter_mut().for_each(|wi| *wi /= n);
    let (s, c) = drift_rate.sin_cos();
    latent.iter().zip(&w).map(|(x, wi)| c * x + s * wi).collect()
}

/// An orthonormal pair spanning a fixed 2-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPlane {
    e1: Vec<f64>,
    e2: Vec<f64>,
}

impl RotationPlane {
    /// Plane through `origin` (unit norm) and a seed-chosen orthogonal direction.
    pub fn through(origin: &[f64], seed: u64) -> Self {
        let mut e2 = gaussian_vector(seed, origin.len());
        let along = dot(&e2, origin);
        e2.iter_mut().zip(origin).for_each(|(v, o)| *v -= along * o);
        let n = dot(&e2, &e2).sqrt();
        e2.iter_mut().for_each(|v| *v /= n);
        RotationPlane { e1: origin.to_vec(), e2 }
    }

    /// Givens rotation by `angle` inside the plane; the orthogonal
    /// complement is left untouched, so norms are preserved for any input.
    pub fn rotate(&self, x: &[f64], angle: f64) -> Vec<f64> {
        if angle == 0.0 {
            return x.to_vec();
        }
        let c1 = dot(x, &self.e1);
        let c2 = dot(x, &self.e2);
        let (s, c) = angle.sin_cos();
        let n1 = c * c1 - s * c2;
        let n2 = s * c1 + c * c2;
        x.iter()
            .zip(self.e1.iter().zip(&self.e2))
            .map(|(xi, (a, b))| xi - c1 * a - c2 * b + n1 * a + n2 * b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneMode {
    /// One plane per chain, through the origin latent.
    Fixed,
    /// A fresh seed-chosen plane at every hop (random walk on the sphere).
    #[default]
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub model_id: String,
    /// Rotation per T2I+I2T cycle, radians.
    pub drift_rate: f64,
    pub dim: usize,
    pub plane: PlaneMode,
    pub plane_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { model_id: "synthetic".into(), drift_rate: 0.1, dim: 64, plane: PlaneMode::PerStep, plane_seed: 0 }
    }
}

/// One painted object: label, optional color, and its box in scene
/// coordinates (normalized to the drawable area above the data rows).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub label: String,
    pub color: Option<ColorName>,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Lays out a scene that satisfies the prompt's expectations exactly.
    pub fn for_prompt(prompt: &GenEvalPrompt) -> Scene {
        let e: &Expectations = &prompt.expectations;
        let color_of = |label: &str| e.colors.iter().find(|c| c.object == label).map(|c| c.color);
        let obj = |label: &str, bbox: [f64; 4]| SceneObject { label: label.to_owned(), color: color_of(label), bbox };
        let objects = match prompt.task {
            Task::SingleObject | Task::Colors => vec![obj(&e.objects[0], [0.3, 0.3, 0.7, 0.7])],
            Task::TwoObject | Task::ColorAttribute => {
                vec![obj(&e.objects[0], [0.05, 0.3, 0.45, 0.7]), obj(&e.objects[1], [0.55, 0.3, 0.95, 0.7])]
            }
            Task::Counting => {
                let n = e.count.unwrap_or(1) as usize;
                let cols = (n as f64).sqrt().ceil() as usize;
                let rows = n.div_ceil(cols);
                let (cw, ch) = (1.0 / cols as f64, 1.0 / rows as f64);
                (0..n)
                    .map(|i| {
                        let (c, r) = ((i % cols) as f64, (i / cols) as f64);
                        obj(&e.objects[0], [(c + 0.15) * cw, (r + 0.15) * ch, (c + 0.85) * cw, (r + 0.85) * ch])
                    })
                    .collect()
            }
            Task::Position => {
                let rel = e.relation.as_ref().expect("validated position prompt");
                let (s, r) = match rel.kind {
                    Relation::LeftOf => ([0.05, 0.35, 0.35, 0.65], [0.65, 0.35, 0.95, 0.65]),
                    Relation::RightOf => ([0.65, 0.35, 0.95, 0.65], [0.05, 0.35, 0.35, 0.65]),
                    Relation::Above => ([0.35, 0.05, 0.65, 0.35], [0.35, 0.65, 0.65, 0.95]),
                    Relation::Below => ([0.35, 0.65, 0.65, 0.95], [0.35, 0.05, 0.65, 0.35]),
                    Relation::None => ([0.3, 0.3, 0.7, 0.7], [0.3, 0.3, 0.7, 0.7]),
                };
                vec![obj(&rel.subject, s), obj(&rel.reference, r)]
            }
        };
        Scene { objects }
    }
}

/// Decoded synthetic state of an artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticState {
    pub anchor: String,
    pub latent: Vec<f64>,
}

pub struct SyntheticBackend {
    config: SyntheticConfig,
    scenes: BTreeMap<String, Arc<Scene>>,
}

impl SyntheticBackend {
    pub fn new(config: SyntheticConfig) -> Self {
        assert!(config.dim >= 2, "synthetic latent needs at least two dimensions");
        SyntheticBackend { config, scenes: BTreeMap::new() }
    }

    /// Registers a scene for every prompt, keyed by prompt text.
    pub fn with_prompts<'a>(mut self, prompts: impl IntoIterator<Item = &'a GenEvalPrompt>) -> Self {
        for p in prompts {
            self.scenes.insert(p.text.clone(), Arc::new(Scene::for_prompt(p)));
        }
        self
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn origin_latent(&self, anchor: &str) -> Vec<f64> {
        unit_vector(derive_seed(&[b"origin", anchor.as_bytes()]), self.config.dim)
    }

    fn hop_angle(&self) -> f64 {
        self.config.drift_rate / 2.0
    }

    fn hop(&self, state: &SyntheticState, step_seed: u64) -> Vec<f64> {
        let angle = self.hop_angle();
        match self.config.plane {
            PlaneMode::Fixed => {
                let origin = self.origin_latent(&state.anchor);
                let seed = derive_seed(&[b"plane", &self.config.plane_seed.to_le_bytes(), state.anchor.as_bytes()]);
                RotationPlane::through(&origin, seed).rotate(&state.latent, angle)
            }
            PlaneMode::PerStep => synthetic_step(&state.latent, angle, step_seed),
        }
    }

    pub fn encode_text(&self, state: &SyntheticState) -> String {
        if state.latent == self.origin_latent(&state.anchor) {
            return state.anchor.clone();
        }
        let bytes: Vec<u8> = state.latent.iter().flat_map(|v| v.to_le_bytes()).collect();
        format!("{}{TEXT_TAG}{}]", state.anchor, hex::encode(bytes))
    }

    /// Plain text (no drift tag) decodes to its own origin state.
    pub fn decode_text(&self, text: &str) -> Result<SyntheticState> {
        if let Some(pos) = text.rfind(TEXT_TAG) {
            if let Some(hexpart) = text[pos + TEXT_TAG.len()..].strip_suffix(']') {
                let bytes = hex::decode(hexpart).map_err(|e| Error::Protocol(format!("bad drift tag: {e}")))?;
                let latent = self.latent_from_bytes(&bytes)?;
                return Ok(SyntheticState { anchor: text[..pos].to_owned(), latent });
            }
        }
        Ok(SyntheticState { anchor: text.to_owned(), latent: self.origin_latent(text) })
    }

    fn latent_from_bytes(&self, bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.len() != self.config.dim * 8 {
            return Err(Error::Protocol(format!(
                "synthetic latent has {} bytes, expected {}",
                bytes.len(),
                self.config.dim * 8
            )));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn state_bytes(state: &SyntheticState) -> Vec<u8> {
        let mut data = Vec::with_capacity(8 + state.anchor.len() + state.latent.len() * 8);
        data.extend_from_slice(&(state.anchor.len() as u32).to_le_bytes());
        data.extend_from_slice(state.anchor.as_bytes());
        data.extend_from_slice(&(state.latent.len() as u32).to_le_bytes());
        for v in &state.latent {
            data.extend_from_slice(&v.to_le_bytes());
        }
        data
    }

    /// Rows reserved at the bottom of the canvas for the state bytes
    /// (including the header row).
    fn data_rows(len: usize, width: u32) -> usize {
        len.div_ceil(3 * width as usize) + 1
    }

    pub fn render_image(&self, state: &SyntheticState, size: ImageSize) -> Result<Vec<u8>> {
        let data = Self::state_bytes(state);
        let (w, h) = (size.width, size.height);
        let rows = Self::data_rows(data.len(), w);
        if w < 3 || (h as usize) < rows + 8 {
            return Err(Error::Config(format!("synthetic image size {size} too small to hold a {}-byte state", data.len())));
        }
        let scene_h = h - rows as u32;
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        match self.scenes.get(&state.anchor) {
            Some(scene) => {
                for o in &scene.objects {
                    let rgb = o.color.map(|c| c.srgb()).unwrap_or([128, 128, 128]);
                    let (x0, y0, x1, y1) = pixel_rect(o.bbox, w, scene_h);
                    for y in y0..y1 {
                        for x in x0..x1 {
                            img.put_pixel(x, y, Rgb(rgb));
                        }
                    }
                }
            }
            None => {
                let tint = |v: f64| (127.5 + 127.5 * v.clamp(-1.0, 1.0) * 4.0).clamp(0.0, 255.0) as u8;
                let px = Rgb([tint(state.latent[0]), tint(state.latent[1]), tint(state.latent[state.latent.len() - 1])]);
                for y in 0..scene_h {
                    for x in 0..w {
                        img.put_pixel(x, y, px);
                    }
                }
            }
        }
        let raw: &mut [u8] = &mut img;
        let row_bytes = 3 * w as usize;
        let header_at = (h as usize - 1) * row_bytes;
        raw[header_at..header_at + 4].copy_from_slice(MAGIC);
        raw[header_at + 4..header_at + 8].copy_from_slice(&(data.len() as u32).to_le_bytes());
        let data_at = (h as usize - rows) * row_bytes;
        raw[data_at..data_at + data.len()].copy_from_slice(&data);
        encode_png(&img)
    }

    pub fn decode_image(&self, png: &[u8]) -> Result<(SyntheticState, ImageSize)> {
        let img = decode(png)?.to_rgb8();
        let (w, h) = img.dimensions();
        let raw: &[u8] = &img;
        let row_bytes = 3 * w as usize;
        let bad = || Error::Protocol("image does not carry a synthetic state".into());
        if w < 3 || h < 2 {
            return Err(bad());
        }
        let header_at = (h as usize - 1) * row_bytes;
        if &raw[header_at..header_at + 4] != MAGIC {
            return Err(bad());
        }
        let len = u32::from_le_bytes(raw[header_at + 4..header_at + 8].try_into().unwrap()) as usize;
        let rows = Self::data_rows(len, w);
        if rows > h as usize {
            return Err(bad());
        }
        let data = &raw[(h as usize - rows) * row_bytes..][..len];
        let take_u32 = |at: usize| -> Result<u32> {
            data.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or_else(bad)
        };
        let alen = take_u32(0)? as usize;
        let anchor = std::str::from_utf8(data.get(4..4 + alen).ok_or_else(bad)?).map_err(|_| bad())?.to_owned();
        let dim = take_u32(4 + alen)? as usize;
        let latent = self.latent_from_bytes(data.get(8 + alen..8 + alen + dim * 8).ok_or_else(bad)?)?;
        let scene_size = ImageSize::new(w, h - rows as u32);
        Ok((SyntheticState { anchor, latent }, scene_size))
    }

    /// Origin image for an image-first chain anchored at `anchor`.
    pub fn origin_image(&self, anchor: &str, size: ImageSize) -> Result<Vec<u8>> {
        self.render_image(&SyntheticState { anchor: anchor.to_owned(), latent: self.origin_latent(anchor) }, size)
    }

    /// Similarity of an artifact's latent to its anchor's origin latent.
    pub fn fidelity(&self, state: &SyntheticState) -> f64 {
        dot(&state.latent, &self.origin_latent(&state.anchor)).clamp(-1.0, 1.0)
    }

    fn object_weight(anchor: &str, index: usize) -> f64 {
        let mut r = rng(derive_seed(&[b"weight", anchor.as_bytes(), &(index as u64).to_le_bytes()]));
        0.55 + 0.45 * (uniform_below(&mut r, 1_000_001) as f64 / 1_000_000.0)
    }
}

fn pixel_rect(bbox: [f64; 4], w: u32, h: u32) -> (u32, u32, u32, u32) {
    let px = |v: f64, n: u32| ((v * n as f64).round() as u32).min(n);
    (px(bbox[0], w), px(bbox[1], h), px(bbox[2], w), px(bbox[3], h))
}

impl ModelBackend for SyntheticBackend {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn version(&self) -> Option<String> {
        Some(format!("synthetic-{}", env!("CARGO_PKG_VERSION")))
    }

    fn t2i(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage> {
        if prompt.is_empty() {
            return Err(Error::Invalid("t2i prompt must be non-empty".into()));
        }
        let state = self.decode_text(prompt)?;
        let step_seed = derive_seed(&[b"t2i", &self.config.plane_seed.to_le_bytes(), &seed.to_le_bytes(), prompt.as_bytes()]);
        let next = SyntheticState { latent: self.hop(&state, step_seed), anchor: state.anchor };
        Ok(GeneratedImage { png: self.render_image(&next, size)?, meta: Meta::new() })
    }

    fn i2t(&self, image: &[u8], _instruction: &str) -> Result<GeneratedText> {
        let (state, _) = self.decode_image(image)?;
        let step_seed = derive_seed(&[b"i2t", &self.config.plane_seed.to_le_bytes(), image]);
        let next = SyntheticState { latent: self.hop(&state, step_seed), anchor: state.anchor };
        Ok(GeneratedText { text: clean_caption(&self.encode_text(&next))?, meta: Meta::new() })
    }
}

impl Embedder for SyntheticBackend {
    /// Every backbone sees the raw latent, so cross-modal and same-modal
    /// similarities share one space.
    fn embed(&self, payload: Payload<'_>, _backbone: &str) -> Result<Vec<f64>> {
        let state = match payload {
            Payload::Text(t) => self.decode_text(t)?,
            Payload::Image(b) => self.decode_image(b)?.0,
        };
        super::normalize_embedding(state.latent, Some(self.config.dim))
    }
}

impl Detector for SyntheticBackend {
    /// Reports every registered scene object whose label was queried, with
    /// confidence `fidelity * weight` where the weight is a fixed per-object
    /// draw in `[0.55, 1]`. Drift therefore makes objects fall below the
    /// scorer's threshold one by one.
    fn detect(&self, image: &[u8], queries: &[String]) -> Result<Vec<Detection>> {
        let (state, scene_size) = self.decode_image(image)?;
        let Some(scene) = self.scenes.get(&state.anchor) else {
            return Ok(Vec::new());
        };
        let total_h = decode(image)?.height() as f64;
        let y_scale = scene_size.height as f64 / total_h;
        let fidelity = self.fidelity(&state).max(0.0);
        let mut out = Vec::new();
        for (i, o) in scene.objects.iter().enumerate() {
            if !queries.iter().any(|q| q == &o.label) {
                continue;
            }
            let (x0, y0, x1, y1) = pixel_rect(o.bbox, scene_size.width, scene_size.height);
            let bbox = [
                x0 as f64 / scene_size.width as f64,
                y0 as f64 / scene_size.height as f64 * y_scale,
                x1 as f64 / scene_size.width as f64,
                y1 as f64 / scene_size.height as f64 * y_scale,
            ];
            let conf = (fidelity * Self::object_weight(&state.anchor, i)).clamp(0.0, 1.0);
            out.push(Detection::new(bbox, o.label.clone(), conf)?);
        }
        Ok(out)
    }
}
