use image::{Rgb, RgbImage};
use serde_json::json;

use super::image_io::{decode, encode_png};
use super::{clean_caption, GeneratedImage, GeneratedText, ImageSize, Meta, ModelBackend};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng, uniform_below};

const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "white", "black", "brown", "purple"];
const NOUNS: [&str; 10] = ["dog", "cat", "bus", "clock", "bench", "cup", "kite", "horse", "train", "chair"];
const PLACES: [&str; 6] = ["on a street", "in a park", "on a table", "near a river", "in a kitchen", "at night"];

/// Seeded stand-in for a unified model. Images are flat-colored canvases
/// with one rectangle; captions are templated from a digest of the pixels.
#[derive(Debug, Clone)]
pub struct MockBackend {
    model_id: String,
    seed: u64,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>, seed: u64) -> Self {
        MockBackend { model_id: model_id.into(), seed }
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        MockBackend::new("mock", 0)
    }
}

impl ModelBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn version(&self) -> Option<String> {
        Some(env!("CARGO_PKG_VERSION").to_owned())
    }

    fn t2i(&self, prompt: &str, seed: u64, size: ImageSize) -> Result<GeneratedImage> {
        if prompt.trim().is_empty() {
            return Err(Error::Invalid("t2i prompt must be non-empty".into()));
        }
        let mut r = rng(derive_seed(&[&self.seed.to_le_bytes(), &seed.to_le_bytes(), prompt.as_bytes()]));
        let mut channel = || uniform_below(&mut r, 256) as u8;
        let bg = Rgb([channel(), channel(), channel()]);
        let fg = Rgb([channel(), channel(), channel()]);
        let mut img = RgbImage::from_pixel(size.width, size.height, bg);
        let (w, h) = (size.width as u64, size.height as u64);
        let x0 = uniform_below(&mut r, w.max(2) / 2) as u32;
        let y0 = uniform_below(&mut r, h.max(2) / 2) as u32;
        for y in y0..(y0 + size.height / 3).min(size.height) {
            for x in x0..(x0 + size.width / 3).min(size.width) {
                img.put_pixel(x, y, fg);
            }
        }
        Ok(GeneratedImage { png: encode_png(&img)?, meta: Meta::new() })
    }

    fn i2t(&self, image: &[u8], instruction: &str) -> Result<GeneratedText> {
        decode(image)?;
        let mut r = rng(derive_seed(&[&self.seed.to_le_bytes(), instruction.as_bytes(), image]));
        let mut pick = |words: &[&'static str]| words[uniform_below(&mut r, words.len() as u64) as usize];
        let text = format!("A photo of a {} {} {}.", pick(&COLORS), pick(&NOUNS), pick(&PLACES));
        let mut meta = Meta::new();
        meta.insert("instruction_len".into(), json!(instruction.len()));
        Ok(GeneratedText { text: clean_caption(&text)?, meta })
    }
}
