//! Paired caption/image indexes, the seeded 200 + 200 ND400 selection,
//! image ingest, and GenEval-style prompt files.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::image_io::{decode, encode_png};
use crate::canonical::{read_json, sha256_hex, to_canonical_line, write_atomic, write_canonical_json};
use crate::chain::{sanitize_id, BenchmarkItem, ImageRef};
use crate::error::{Error, Result};
use crate::metrics::mgg::GenEvalPrompt;
use crate::par;
use crate::seed::{derive_seed, rng, uniform_below};

pub const PER_SOURCE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "nocaps", alias = "NoCaps")]
    NoCaps,
    #[serde(rename = "docci", alias = "DOCCI")]
    Docci,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::NoCaps => "nocaps",
            Source::Docci => "docci",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPair {
    pub pair_id: String,
    pub source: Source,
    /// Local path or http(s) URL.
    pub image_ref: String,
    pub caption: String,
    /// Hex SHA-256 of the ingested PNG; set at ingest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
}

impl DatasetPair {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.pair_id.is_empty() {
            return Err("`pair_id` must be non-empty".into());
        }
        if self.caption.trim().is_empty() {
            return Err("`caption` must be non-empty".into());
        }
        if self.image_ref.is_empty() {
            return Err("`image_ref` must be non-empty".into());
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Reads a JSON-lines index. Blank lines are skipped.
pub fn load_index(path: &Path) -> Result<Vec<DatasetPair>> {
    let text = read_lines(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: DatasetPair = serde_json::from_str(line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        pair.validate().map_err(|m| parse_error(path, i + 1, m))?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(Error::DuplicateId(pair.pair_id));
        }
        out.push(pair);
    }
    Ok(out)
}

/// In-place Fisher–Yates shuffle driven by ChaCha8.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut r = rng(seed);
    for i in (1..items.len()).rev() {
        let j = uniform_below(&mut r, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

/// Draws `n` pairs without replacement. The index is sorted by id first,
/// so the draw depends only on its contents and the seed.
pub fn sample_source(index: &[DatasetPair], source: Source, n: usize, seed: u64) -> Result<Vec<DatasetPair>> {
    if let Some(p) = index.iter().find(|p| p.source != source) {
        return Err(Error::Invalid(format!("pair `{}` is from {} but listed in the {source} index", p.pair_id, p.source)));
    }
    if index.len() < n {
        return Err(Error::InsufficientSource { source_name: source.to_string(), available: index.len(), required: n });
    }
    let mut sorted = index.to_vec();
    sorted.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(Error::DuplicateId(w[0].pair_id.clone()));
    }
    shuffle(&mut sorted, derive_seed(&[b"nd400", &seed.to_le_bytes(), source.as_str().as_bytes()]));
    sorted.truncate(n);
    Ok(sorted)
}

/// Digest of a selection: one `source, id, caption hash, image ref` line
/// per pair, sorted.
pub fn selection_fingerprint(pairs: &[DatasetPair]) -> String {
    let mut lines: Vec<String> = pairs
        .iter()
        .map(|p| format!("{}\t{}\t{}\t{}\n", p.source, p.pair_id, sha256_hex(p.caption.as_bytes()), p.image_ref))
        .collect();
    lines.sort();
    sha256_hex(lines.concat().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Nd400 {
    pub seed: u64,
    pub fingerprint: String,
    pub pairs: Vec<DatasetPair>,
}

impl Nd400 {
    pub fn count(&self, source: Source) -> usize {
        self.pairs.iter().filter(|p| p.source == source).count()
    }
}

pub fn sample_nd400(nocaps: &[DatasetPair], docci: &[DatasetPair], seed: u64) -> Result<Nd400> {
    let mut pairs = sample_source(nocaps, Source::NoCaps, PER_SOURCE, seed)?;
    pairs.extend(sample_source(docci, Source::Docci, PER_SOURCE, seed)?);
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if let Some(w) = pairs.windows(2).find(|w| w[0].pair_id == w[1].pair_id) {
        return Err(Error::DuplicateId(w[0].pair_id.clone()));
    }
    Ok(Nd400 { seed, fingerprint: selection_fingerprint(&pairs), pairs })
}

fn fetch(image_ref: &str, base: &Path) -> Result<Vec<u8>> {
    if image_ref.starts_with("http://") || image_ref.starts_with("https://") {
        let resp = reqwest::blocking::get(image_ref)
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::BackendUnavailable(format!("fetching {image_ref}: {e}")))?;
        let bytes = resp.bytes().map_err(|e| Error::BackendUnavailable(format!("reading {image_ref}: {e}")))?;
        return Ok(bytes.to_vec());
    }
    let path = base.join(image_ref);
    std::fs::read(&path).map_err(|e| Error::io(path, e))
}

/// Directories that relative local image refs are resolved against, one
/// per source (normally the directory of each index file).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestRoots {
    pub nocaps: PathBuf,
    pub docci: PathBuf,
}

impl IngestRoots {
    pub fn for_source(&self, source: Source) -> &Path {
        match source {
            Source::NoCaps => &self.nocaps,
            Source::Docci => &self.docci,
        }
    }
}

/// Copies or downloads every image, re-encodes it as PNG under
/// `out_dir/images/`, records its digest, and writes `out_dir/nd400.json`
/// with image refs relative to `out_dir`.
pub fn ingest(selection: &Nd400, roots: &IngestRoots, out_dir: &Path, concurrency: usize) -> Result<Nd400> {
    let images = out_dir.join("images");
    let ingested = par::map_bounded(concurrency, &selection.pairs, |p| -> Result<DatasetPair> {
        let raw = fetch(&p.image_ref, roots.for_source(p.source))?;
        let img = decode(&raw).map_err(|e| Error::Invalid(format!("image for `{}` is not decodable: {e}", p.pair_id)))?;
        let png = encode_png(&img.to_rgb8())?;
        let rel = format!("images/{}.png", sanitize_id(&p.pair_id));
        write_atomic(&images.join(format!("{}.png", sanitize_id(&p.pair_id))), &png)?;
        Ok(DatasetPair { image_ref: rel, image_hash: Some(sha256_hex(&png)), ..p.clone() })
    });
    let pairs = ingested.into_iter().collect::<Result<Vec<_>>>()?;
    let out = Nd400 { seed: selection.seed, fingerprint: selection.fingerprint.clone(), pairs };
    write_canonical_json(&out_dir.join("nd400.json"), &out)?;
    Ok(out)
}

/// Loads an ingested `nd400.json` (or any file of the same shape) as
/// benchmark items with image paths resolved next to the file.
pub fn load_pairs(path: &Path) -> Result<Vec<BenchmarkItem>> {
    let set: Nd400 = read_json(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    set.pairs
        .iter()
        .map(|p| {
            let image = p
                .image_hash
                .as_ref()
                .map(|h| ImageRef { path: base.join(&p.image_ref), sha256: h.clone() });
            Ok(BenchmarkItem { id: p.pair_id.clone(), text: p.caption.clone(), image })
        })
        .collect()
}

/// Reads a JSON-lines prompt file. Blank lines are skipped; every record is
/// validated against its task and ids must be unique.
pub fn load_geneval_rewritten(path: &Path) -> Result<Vec<GenEvalPrompt>> {
    let text = read_lines(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let prompt: GenEvalPrompt = serde_json::from_str(line).map_err(|e| parse_error(path, i + 1, e.to_string()))?;
        prompt.validate().map_err(|m| parse_error(path, i + 1, m))?;
        if !seen.insert(prompt.prompt_id.clone()) {
            return Err(Error::DuplicateId(prompt.prompt_id));
        }
        out.push(prompt);
    }
    Ok(out)
}

/// Canonical JSON-lines form of a prompt list.
pub fn prompts_to_jsonl(prompts: &[GenEvalPrompt]) -> Result<String> {
    let mut out = String::new();
    for p in prompts {
        out.push_str(&to_canonical_line(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn prompt_items(prompts: &[GenEvalPrompt]) -> Vec<BenchmarkItem> {
    prompts.iter().map(|p| BenchmarkItem { id: p.prompt_id.clone(), text: p.text.clone(), image: None }).collect()
}
