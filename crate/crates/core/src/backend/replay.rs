use std::collections::HashMap;
use std::path::Path;

use super::{GeneratedImage, GeneratedText, ImageSize, Meta, ModelBackend};
use crate::canonical::sha256_hex;
use crate::chain::{Modality, RunStore};
use crate::error::{Error, Result};

/// Serves responses recorded in existing chain directories, keyed by the
/// digest of the input payload.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    model_id: String,
    responses: HashMap<String, (Modality, Vec<u8>, Meta)>,
}

impl ReplayBackend {
    pub fn from_chain_dirs<P: AsRef<Path>>(dirs: &[P]) -> Result<Self> {
        let mut backend = ReplayBackend::default();
        for dir in dirs {
            backend.load_chain(dir.as_ref())?;
        }
        Ok(backend)
    }

    /// Loads every chain under `<run>/chains/`.
    pub fn from_run_dir(run_dir: &Path) -> Result<Self> {
        let store = RunStore::new(run_dir);
        let dirs: Vec<_> = store.chain_ids()?.iter().map(|id| store.chain_dir(id)).collect();
        ReplayBackend::from_chain_dirs(&dirs)
    }

    fn load_chain(&mut self, dir: &Path) -> Result<()> {
        let (store, chain_id) = RunStore::for_chain_dir(dir)?;
        let record = store
            .load_record(&chain_id)?
            .ok_or_else(|| Error::Config(format!("{} has no record.json", dir.display())))?;
        if self.model_id.is_empty() {
            self.model_id = record.spec.model_id.clone();
        } else if self.model_id != record.spec.model_id {
            return Err(Error::Config(format!(
                "replay fixtures mix models `{}` and `{}`",
                self.model_id, record.spec.model_id
            )));
        }
        let mut input = store.origin_bytes(&record.spec)?;
        for a in &record.artifacts {
            let output = store.read_artifact(&chain_id, a)?;
            self.responses.insert(sha256_hex(&input), (a.modality, output.clone(), a.backend_meta.clone()));
            input = output;
        }
        Ok(())
    }

    fn lookup(&self, input: &[u8], want: Modality) -> Result<(&Vec<u8>, &Meta)> {
        match self.responses.get(&sha256_hex(input)) {
            Some((m, bytes, meta)) if *m == want => Ok((bytes, meta)),
            Some(_) => Err(Error::Protocol(format!("recorded response for this input is not {want:?}"))),
            None => Err(Error::Protocol("no recorded response for this input".into())),
        }
    }
}

impl ModelBackend for ReplayBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn t2i(&self, prompt: &str, _seed: u64, _size: ImageSize) -> Result<GeneratedImage> {
        let (png, meta) = self.lookup(prompt.as_bytes(), Modality::Image)?;
        Ok(GeneratedImage { png: png.clone(), meta: meta.clone() })
    }

    fn i2t(&self, image: &[u8], _instruction: &str) -> Result<GeneratedText> {
        let (text, meta) = self.lookup(image, Modality::Text)?;
        let text = String::from_utf8(text.clone()).map_err(|_| Error::Protocol("recorded caption is not UTF-8".into()))?;
        Ok(GeneratedText { text, meta: meta.clone() })
    }
}
