//! On-disk run layout:
//!
//! ```text
//! <run>/manifest.json
//! <run>/chains/<chain_id>/spec.json
//! <run>/chains/<chain_id>/g0001.png | g0001.txt ...
//! <run>/chains/<chain_id>/record.json
//! ```
//!
//! Distinct chains may be written concurrently; each chain has one writer.

use std::fs;
use std::path::{Path, PathBuf};

use super::{artifact_file_name, ChainRecord, ChainSpec, GenerationArtifact, Modality, Origin};
use crate::backend::Meta;
use crate::canonical::{read_json, sha256_hex, write_atomic, write_canonical_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    /// Store and chain id for a `<run>/chains/<chain_id>` directory.
    pub fn for_chain_dir(chain_dir: &Path) -> Result<(RunStore, String)> {
        let chain_id = chain_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("not a chain directory: {}", chain_dir.display())))?
            .to_owned();
        let run = chain_dir
            .parent()
            .filter(|p| p.file_name().is_some_and(|n| n == "chains"))
            .and_then(Path::parent)
            .ok_or_else(|| Error::Config(format!("{} is not inside <run>/chains/", chain_dir.display())))?;
        Ok((RunStore::new(run), chain_id))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn chains_dir(&self) -> PathBuf {
        self.root.join("chains")
    }

    pub fn chain_dir(&self, chain_id: &str) -> PathBuf {
        self.chains_dir().join(chain_id)
    }

    fn spec_path(&self, chain_id: &str) -> PathBuf {
        self.chain_dir(chain_id).join("spec.json")
    }

    fn record_path(&self, chain_id: &str) -> PathBuf {
        self.chain_dir(chain_id).join("record.json")
    }

    pub fn write_spec(&self, spec: &ChainSpec) -> Result<()> {
        write_canonical_json(&self.spec_path(&spec.chain_id), spec)
    }

    pub fn load_spec(&self, chain_id: &str) -> Result<ChainSpec> {
        read_json(&self.spec_path(chain_id))
    }

    pub fn load_record(&self, chain_id: &str) -> Result<Option<ChainRecord>> {
        let path = self.record_path(chain_id);
        if !path.exists() {
            return Ok(None);
        }
        let record: ChainRecord = read_json(&path)?;
        record.validate()?;
        Ok(Some(record))
    }

    pub fn write_record(&self, record: &ChainRecord) -> Result<()> {
        write_canonical_json(&self.record_path(&record.spec.chain_id), record)
    }

    /// Writes the payload for generation `g` and returns its artifact entry.
    pub fn write_artifact(
        &self,
        spec: &ChainSpec,
        g: u32,
        modality: Modality,
        bytes: &[u8],
        backend_meta: Meta,
    ) -> Result<GenerationArtifact> {
        let file = artifact_file_name(g, modality);
        write_atomic(&self.chain_dir(&spec.chain_id).join(&file), bytes)?;
        Ok(GenerationArtifact { g, modality, file, parent_g: g - 1, backend_meta, content_hash: sha256_hex(bytes) })
    }

    /// Reads an artifact payload and checks it against the recorded digest.
    pub fn read_artifact(&self, chain_id: &str, artifact: &GenerationArtifact) -> Result<Vec<u8>> {
        let path = self.chain_dir(chain_id).join(&artifact.file);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::Integrity { chain_id: chain_id.to_owned(), g: artifact.g })
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        if sha256_hex(&bytes) != artifact.content_hash {
            return Err(Error::Integrity { chain_id: chain_id.to_owned(), g: artifact.g });
        }
        Ok(bytes)
    }

    /// Origin payload bytes; image origins are verified against their digest.
    pub fn origin_bytes(&self, spec: &ChainSpec) -> Result<Vec<u8>> {
        match &spec.origin {
            Origin::Text(t) => Ok(t.as_bytes().to_vec()),
            Origin::Image(r) => {
                let bytes = fs::read(&r.path).map_err(|e| Error::io(&r.path, e))?;
                if sha256_hex(&bytes) != r.sha256 {
                    return Err(Error::Integrity { chain_id: spec.chain_id.clone(), g: 0 });
                }
                Ok(bytes)
            }
        }
    }

    /// Removes artifact files past `keep` generations (left behind by an
    /// interrupted writer).
    pub fn prune_after(&self, chain_id: &str, keep: u32) -> Result<()> {
        let dir = self.chain_dir(chain_id);
        let Ok(entries) = fs::read_dir(&dir) else { return Ok(()) };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let g = name
                .strip_prefix('g')
                .and_then(|rest| rest.split_once('.'))
                .filter(|(_, ext)| *ext == "png" || *ext == "txt")
                .and_then(|(num, _)| num.parse::<u32>().ok());
            if matches!(g, Some(g) if g > keep) {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
        Ok(())
    }

    pub fn chain_ids(&self) -> Result<Vec<String>> {
        let dir = self.chains_dir();
        let mut ids = Vec::new();
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ids),
            Err(e) => return Err(Error::io(dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// All chain records in chain-id order.
    pub fn load_records(&self) -> Result<Vec<ChainRecord>> {
        let mut out = Vec::new();
        for id in self.chain_ids()? {
            if let Some(r) = self.load_record(&id)? {
                out.push(r);
            }
        }
        Ok(out)
    }
}
