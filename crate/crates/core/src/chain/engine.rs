use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::store::RunStore;
use super::{
    plan_chain, sanitize_id, ChainRecord, ChainSpec, ChainStatus, ImageRef, Origin, StartModality, StepKind,
};
use crate::backend::image_io::normalize_png;
use crate::backend::{clean_caption, ImageSize, Meta, ModelBackend};
use crate::canonical::{sha256_hex, to_canonical_string, write_canonical_json};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::derive_seed;

fn check_model(spec: &ChainSpec, backend: &dyn ModelBackend) -> Result<()> {
    if spec.model_id != backend.model_id() {
        return Err(Error::Config(format!(
            "chain `{}` was specified for model `{}` but the backend serves `{}`",
            spec.chain_id,
            spec.model_id,
            backend.model_id()
        )));
    }
    Ok(())
}

/// Runs a chain from scratch. Every artifact is persisted, together with an
/// updated `record.json`, before the next step is issued.
///
/// Transient backend failures end the chain as `Partial`; malformed backend
/// responses end it as `Failed`. Both are returned as `Ok` records so
/// batch callers can keep going; only store and config problems are `Err`.
pub fn run_chain(spec: &ChainSpec, backend: &dyn ModelBackend, store: &RunStore) -> Result<ChainRecord> {
    spec.validate()?;
    check_model(spec, backend)?;
    if let Some(existing) = store.load_record(&spec.chain_id)? {
        if existing.status == ChainStatus::Complete {
            return Err(Error::StoreConflict(spec.chain_id.clone()));
        }
    }
    store.prune_after(&spec.chain_id, 0)?;
    store.write_spec(spec)?;
    let record = ChainRecord::new(spec.clone());
    store.write_record(&record)?;
    let origin = store.origin_bytes(spec)?;
    drive(record, origin, backend, store)
}

/// Continues a `Partial` (or `Failed`) chain from `G_done + 1`. A complete
/// chain is returned unchanged. Stored artifacts are re-verified first; a
/// digest mismatch marks the chain `Failed` and returns the integrity error.
pub fn resume_chain(chain_dir: &Path, backend: &dyn ModelBackend) -> Result<ChainRecord> {
    let (store, chain_id) = RunStore::for_chain_dir(chain_dir)?;
    let spec = store.load_spec(&chain_id)?;
    check_model(&spec, backend)?;
    let mut record = match store.load_record(&chain_id)? {
        Some(r) => r,
        None => ChainRecord::new(spec.clone()),
    };
    if record.spec != spec {
        return Err(Error::Config(format!("chain `{chain_id}`: spec.json and record.json disagree")));
    }
    if record.status == ChainStatus::Complete {
        return Ok(record);
    }
    let mut last = store.origin_bytes(&spec);
    for a in &record.artifacts {
        last = store.read_artifact(&chain_id, a);
        if last.is_err() {
            break;
        }
    }
    let last = match last {
        Ok(bytes) => bytes,
        Err(e @ Error::Integrity { .. }) => {
            record.status = ChainStatus::Failed;
            record.error = Some(e.to_string());
            store.write_record(&record)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    store.prune_after(&chain_id, record.generations_done())?;
    drive(record, last, backend, &store)
}

fn drive(mut record: ChainRecord, mut prev: Vec<u8>, backend: &dyn ModelBackend, store: &RunStore) -> Result<ChainRecord> {
    let spec = record.spec.clone();
    let done = record.generations_done() as usize;
    for (g, kind) in plan_chain(&spec).into_iter().skip(done) {
        match step(&spec, g, kind, &prev, backend) {
            Ok((bytes, meta)) => {
                let artifact = store.write_artifact(&spec, g, spec.modality_at(g), &bytes, meta)?;
                record.artifacts.push(artifact);
                record.status = if g == spec.generations { ChainStatus::Complete } else { ChainStatus::Partial };
                record.error = None;
                store.write_record(&record)?;
                prev = bytes;
            }
            Err(e) if e.is_transient() => {
                record.status = ChainStatus::Partial;
                record.error = Some(format!("g={g}: {e}"));
                store.write_record(&record)?;
                return Ok(record);
            }
            Err(e @ (Error::Protocol(_) | Error::Invalid(_) | Error::Image(_))) => {
                record.status = ChainStatus::Failed;
                record.error = Some(format!("g={g}: {e}"));
                store.write_record(&record)?;
                return Ok(record);
            }
            Err(e) => return Err(e),
        }
    }
    if spec.generations == 0 {
        store.write_record(&record)?;
    }
    Ok(record)
}

fn step(spec: &ChainSpec, g: u32, kind: StepKind, prev: &[u8], backend: &dyn ModelBackend) -> Result<(Vec<u8>, Meta)> {
    match kind {
        StepKind::T2I => {
            let prompt = std::str::from_utf8(prev)
                .map_err(|_| Error::Protocol(format!("text artifact g={} is not UTF-8", g - 1)))?;
            let out = backend.t2i(prompt, spec.step_seed(g), spec.image_size)?;
            let (png, native) = normalize_png(&out.png, spec.image_size)?;
            let mut meta = out.meta;
            if let Some(n) = native {
                meta.insert("native_width".into(), json!(n.width));
                meta.insert("native_height".into(), json!(n.height));
            }
            Ok((png, meta))
        }
        StepKind::I2T => {
            let out = backend.i2t(prev, &spec.i2t_instruction)?;
            Ok((clean_caption(&out.text)?.into_bytes(), out.meta))
        }
    }
}

/// Chain settings shared by every chain of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSetup {
    pub start: StartModality,
    pub generations: u32,
    pub seed: u64,
    pub i2t_instruction: String,
    pub image_size: ImageSize,
}

/// One dataset entry to run a chain from.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkItem {
    pub id: String,
    pub text: String,
    pub image: Option<ImageRef>,
}

impl BenchmarkItem {
    fn fingerprint_line(&self) -> String {
        let image = self.image.as_ref().map(|r| r.sha256.as_str()).unwrap_or("-");
        format!("{}\t{}\t{}\n", self.id, sha256_hex(self.text.as_bytes()), image)
    }
}

/// Digest over `(id, text hash, image hash)` of every item, in id order.
pub fn dataset_fingerprint(items: &[BenchmarkItem]) -> String {
    let mut lines: Vec<String> = items.iter().map(BenchmarkItem::fingerprint_line).collect();
    lines.sort();
    sha256_hex(lines.concat().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub endpoint: String,
    pub model_id: Option<String>,
    pub version: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkPlan {
    pub run_id: String,
    pub setup: ChainSetup,
    pub items: Vec<BenchmarkItem>,
    pub concurrency: usize,
    /// Resolved configuration, embedded verbatim in the manifest.
    pub config: Value,
    pub backends: BTreeMap<String, BackendIdentity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub status: ChainStatus,
    pub generations_done: u32,
    pub error: Option<String>,
    /// Digest of the chain's `record.json`.
    pub record_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: Value,
    pub dataset_fingerprint: String,
    pub backends: BTreeMap<String, BackendIdentity>,
    pub chains: BTreeMap<String, ChainEntry>,
    pub counts: BTreeMap<String, usize>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn any_failed(&self) -> bool {
        self.chains.values().any(|c| c.status == ChainStatus::Failed)
    }
}

fn chain_specs(plan: &BenchmarkPlan, model_id: &str) -> Result<Vec<ChainSpec>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut specs = Vec::with_capacity(plan.items.len());
    for item in &plan.items {
        let chain_id = sanitize_id(&item.id);
        if !seen.insert(chain_id.clone()) {
            return Err(Error::DuplicateId(chain_id));
        }
        let origin = match plan.setup.start {
            StartModality::TextFirst => Origin::Text(item.text.clone()),
            StartModality::ImageFirst => Origin::Image(
                item.image
                    .clone()
                    .ok_or_else(|| Error::Config(format!("item `{}` has no image for an image-first chain", item.id)))?,
            ),
        };
        let seed = derive_seed(&[&plan.setup.seed.to_le_bytes(), chain_id.as_bytes()]);
        let spec = ChainSpec {
            chain_id,
            start: plan.setup.start,
            origin,
            generations: plan.setup.generations,
            model_id: model_id.to_owned(),
            i2t_instruction: plan.setup.i2t_instruction.clone(),
            seed,
            image_size: plan.setup.image_size,
        };
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

fn execute(spec: &ChainSpec, backend: &dyn ModelBackend, store: &RunStore) -> Result<ChainRecord> {
    match store.load_record(&spec.chain_id)? {
        Some(existing) if existing.spec != *spec => Err(Error::Config(format!(
            "chain `{}` already exists with a different spec; use a new run id",
            spec.chain_id
        ))),
        Some(existing) if existing.status == ChainStatus::Complete => Ok(existing),
        Some(_) => resume_chain(&store.chain_dir(&spec.chain_id), backend),
        None => run_chain(spec, backend, store),
    }
}

/// Runs (or resumes) one chain per item with at most `plan.concurrency`
/// chains in flight, then writes `manifest.json`.
pub fn run_benchmark(plan: &BenchmarkPlan, backend: &dyn ModelBackend, store: &RunStore) -> Result<RunManifest> {
    let started_at = now();
    let specs = chain_specs(plan, backend.model_id())?;
    let results = par::map_bounded(plan.concurrency, &specs, |spec| execute(spec, backend, store));

    let mut chains = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> =
        ["complete", "partial", "failed"].iter().map(|k| (k.to_string(), 0)).collect();
    for (spec, result) in specs.iter().zip(results) {
        let entry = match result {
            Ok(record) => ChainEntry {
                status: record.status,
                generations_done: record.generations_done(),
                error: record.error.clone(),
                record_sha256: Some(sha256_hex(to_canonical_string(&record)?.as_bytes())),
            },
            Err(e) => ChainEntry {
                status: ChainStatus::Failed,
                generations_done: store
                    .load_record(&spec.chain_id)
                    .ok()
                    .flatten()
                    .map(|r| r.generations_done())
                    .unwrap_or(0),
                error: Some(e.to_string()),
                record_sha256: None,
            },
        };
        let key = match entry.status {
            ChainStatus::Complete => "complete",
            ChainStatus::Partial => "partial",
            ChainStatus::Failed => "failed",
        };
        *counts.get_mut(key).expect("status key") += 1;
        chains.insert(spec.chain_id.clone(), entry);
    }

    let manifest = RunManifest {
        run_id: plan.run_id.clone(),
        config: plan.config.clone(),
        dataset_fingerprint: dataset_fingerprint(&plan.items),
        backends: plan.backends.clone(),
        chains,
        counts,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        started_at,
        finished_at: now(),
    };
    write_canonical_json(&store.manifest_path(), &manifest)?;
    Ok(manifest)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
