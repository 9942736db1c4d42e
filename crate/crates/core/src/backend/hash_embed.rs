use super::{normalize_embedding, Embedder, Payload};
use crate::error::Result;
use crate::seed::{derive_seed, gaussian_vector};

/// Test embedder: bag of hashed tokens for text, a digest-seeded vector for
/// image bytes. Deterministic, dependency-free and meaningless beyond
/// "identical payloads map to identical vectors".
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(64)
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, payload: Payload<'_>, backbone: &str) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut add = |seed: u64| {
            for (a, x) in acc.iter_mut().zip(gaussian_vector(seed, self.dim)) {
                *a += x;
            }
        };
        match payload {
            Payload::Text(text) => {
                let lower = text.to_lowercase();
                let mut any = false;
                for tok in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
                    add(derive_seed(&[backbone.as_bytes(), b"tok", tok.as_bytes()]));
                    any = true;
                }
                if !any {
                    add(derive_seed(&[backbone.as_bytes(), b"raw", text.as_bytes()]));
                }
            }
            Payload::Image(bytes) => add(derive_seed(&[backbone.as_bytes(), b"img", bytes])),
        }
        normalize_embedding(acc, Some(self.dim))
    }
}
