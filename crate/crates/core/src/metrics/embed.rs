//! Embedding-similarity drift: origin/artifact pairings, per-index dataset
//! averages, and mean cumulative drift per mapping and across mappings.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::backend::{Embedder, Payload};
use crate::canonical::{fmt_f64, sha256_hex, write_atomic};
use crate::chain::{ChainRecord, ChainStatus, GenerationArtifact, Modality, RunStore, StartModality};
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    TextToText,
    TextToImage,
    ImageToImage,
    ImageToText,
}

impl Direction {
    pub const ALL: [Direction; 4] =
        [Direction::TextToText, Direction::TextToImage, Direction::ImageToImage, Direction::ImageToText];

    pub fn origin(self) -> Modality {
        match self {
            Direction::TextToText | Direction::TextToImage => Modality::Text,
            Direction::ImageToImage | Direction::ImageToText => Modality::Image,
        }
    }

    pub fn target(self) -> Modality {
        match self {
            Direction::TextToText | Direction::ImageToText => Modality::Text,
            Direction::TextToImage | Direction::ImageToImage => Modality::Image,
        }
    }

    /// The chain type this mapping is measured on.
    pub fn start(self) -> StartModality {
        match self.origin() {
            Modality::Text => StartModality::TextFirst,
            Modality::Image => StartModality::ImageFirst,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TextToText => "text_to_text",
            Direction::TextToImage => "text_to_image",
            Direction::ImageToImage => "image_to_image",
            Direction::ImageToText => "image_to_text",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown direction `{s}`")))
    }
}

/// Which modalities a backbone embeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Joint,
    TextOnly,
    ImageOnly,
}

impl BackboneKind {
    /// Classifies well-known backbone families by id prefix. Unrecognized ids
    /// are assumed to be joint text-image encoders.
    pub fn of(backbone: &str) -> BackboneKind {
        let id = backbone.to_ascii_lowercase();
        let starts = |prefixes: &[&str]| prefixes.iter().any(|p| id.starts_with(p));
        if starts(&["dino"]) {
            BackboneKind::ImageOnly
        } else if starts(&["mpnet", "all-mpnet", "minilm", "all-minilm", "sbert", "sentence-"]) {
            BackboneKind::TextOnly
        } else {
            BackboneKind::Joint
        }
    }

    fn embeds(self, m: Modality) -> bool {
        match self {
            BackboneKind::Joint => true,
            BackboneKind::TextOnly => m == Modality::Text,
            BackboneKind::ImageOnly => m == Modality::Image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DistanceMapping {
    pub direction: Direction,
    pub backbone: String,
}

impl DistanceMapping {
    pub fn new(direction: Direction, backbone: impl Into<String>) -> Result<Self> {
        let m = DistanceMapping { direction, backbone: backbone.into() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = BackboneKind::of(&self.backbone);
        if self.backbone.is_empty() || !kind.embeds(self.direction.origin()) || !kind.embeds(self.direction.target()) {
            return Err(Error::BackboneMismatch {
                direction: self.direction.to_string(),
                backbone: self.backbone.clone(),
            });
        }
        Ok(())
    }

    /// `<direction>_<backbone>`, used in file names.
    pub fn key(&self) -> String {
        format!("{}_{}", self.direction, crate::chain::sanitize_id(&self.backbone))
    }

    /// The mappings measured on one chain type in the default experiment
    /// matrix: text-first gets text->text (MPNet, CLIP) and text->image
    /// (CLIP); image-first gets image->image (DINO, CLIP) and image->text
    /// (CLIP).
    pub fn defaults_for(start: StartModality) -> Vec<DistanceMapping> {
        let m = |d, b: &str| DistanceMapping { direction: d, backbone: b.to_owned() };
        match start {
            StartModality::TextFirst => vec![
                m(Direction::TextToText, "mpnet"),
                m(Direction::TextToText, "clip"),
                m(Direction::TextToImage, "clip"),
            ],
            StartModality::ImageFirst => vec![
                m(Direction::ImageToImage, "dino"),
                m(Direction::ImageToImage, "clip"),
                m(Direction::ImageToText, "clip"),
            ],
        }
    }
}

impl fmt::Display for DistanceMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.direction, self.backbone)
    }
}

impl FromStr for DistanceMapping {
    type Err = Error;
    /// Parses `<direction>/<backbone>`.
    fn from_str(s: &str) -> Result<Self> {
        let (d, b) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("mapping `{s}` must look like `<direction>/<backbone>`")))?;
        DistanceMapping::new(d.parse()?, b)
    }
}

/// One origin/artifact comparison: the `k`-th artifact of the target
/// modality, found at raw generation `g`.
#[derive(Debug, Clone, Copy)]
pub struct Pairing<'a> {
    pub k: usize,
    pub g: u32,
    pub artifact: &'a GenerationArtifact,
}

/// Every artifact of the mapping's target modality in generation order.
pub fn pairings(chain: &ChainRecord, direction: Direction) -> Result<Vec<Pairing<'_>>> {
    if direction.start() != chain.spec.start {
        return Err(Error::MappingMismatch { direction: direction.to_string(), start: chain.spec.start.to_string() });
    }
    Ok(chain
        .artifacts
        .iter()
        .filter(|a| a.modality == direction.target())
        .enumerate()
        .map(|(i, a)| Pairing { k: i + 1, g: a.g, artifact: a })
        .collect())
}

/// Number of target-modality artifacts in a complete chain of `generations`.
pub fn comparisons_per_chain(start: StartModality, direction: Direction, generations: u32) -> usize {
    let same = direction.target() == start.origin_modality();
    let g = generations as usize;
    if same {
        g / 2
    } else {
        g.div_ceil(2)
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`. Identical inputs give exactly 1.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { left: u.len(), right: v.len() });
    }
    let nu = dot(u, u);
    let nv = dot(v, v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(u, v) / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Per-backbone embedding cache keyed by payload digest. Concurrent inserts
/// of the same key keep the first value.
/// (backbone, payload digest).
type CacheKey = (String, String);

#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<CacheKey, Arc<Vec<f64>>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_embed(&self, embedder: &dyn Embedder, payload: Payload<'_>, backbone: &str) -> Result<Arc<Vec<f64>>> {
        let key = (backbone.to_owned(), sha256_hex(payload.bytes()));
        if let Some(v) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(embedder.embed(payload, backbone)?);
        let mut entries = self.entries.write().expect("cache lock");
        Ok(Arc::clone(entries.entry(key).or_insert(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub k: usize,
    pub g: u32,
    #[serde(rename = "S")]
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    pub mapping: DistanceMapping,
    pub points: Vec<SeriesPoint>,
    pub n_items: usize,
}

impl SimilaritySeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.s).collect()
    }
}

fn embed_payload(
    embedder: &dyn Embedder,
    cache: Option<&EmbeddingCache>,
    modality: Modality,
    bytes: &[u8],
    backbone: &str,
) -> Result<Arc<Vec<f64>>> {
    let payload = match modality {
        Modality::Text => Payload::Text(
            std::str::from_utf8(bytes).map_err(|_| Error::Protocol("text payload is not UTF-8".into()))?,
        ),
        Modality::Image => Payload::Image(bytes),
    };
    match cache {
        Some(c) => c.get_or_embed(embedder, payload, backbone),
        None => Ok(Arc::new(embedder.embed(payload, backbone)?)),
    }
}

/// Origin-to-artifact cosines for one complete chain, one point per `k`.
pub fn chain_similarities(
    store: &RunStore,
    chain: &ChainRecord,
    mapping: &DistanceMapping,
    embedder: &dyn Embedder,
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<SeriesPoint>> {
    let pairs = pairings(chain, mapping.direction)?;
    let origin = store.origin_bytes(&chain.spec)?;
    let origin_vec = embed_payload(embedder, cache, mapping.direction.origin(), &origin, &mapping.backbone)?;
    pairs
        .iter()
        .map(|p| {
            let bytes = store.read_artifact(&chain.spec.chain_id, p.artifact)?;
            let v = embed_payload(embedder, cache, p.artifact.modality, &bytes, &mapping.backbone)?;
            Ok(SeriesPoint { k: p.k, g: p.g, s: cosine(&origin_vec, &v)? })
        })
        .collect()
}

/// Averages per-chain points at each comparison index. Values at each `k`
/// are summed in sorted order, so the result does not depend on chain order.
pub fn aggregate_series(mapping: DistanceMapping, per_chain: &[Vec<SeriesPoint>]) -> Result<SimilaritySeries> {
    let Some(first) = per_chain.first() else {
        return Err(Error::EmptySeries);
    };
    let n = per_chain.len();
    let mut points = Vec::with_capacity(first.len());
    for (idx, head) in first.iter().enumerate() {
        let mut vals = Vec::with_capacity(n);
        for chain in per_chain {
            let p = chain.get(idx).filter(|p| p.k == head.k).ok_or_else(|| Error::IncompleteChain {
                chain_id: String::from("<aggregate>"),
                k: head.k,
            })?;
            vals.push(p.s);
        }
        vals.sort_by(f64::total_cmp);
        let s = vals.iter().sum::<f64>() / n as f64;
        points.push(SeriesPoint { k: head.k, g: head.g, s });
    }
    Ok(SimilaritySeries { mapping, points, n_items: n })
}

/// Dataset-average similarity at every comparison index. All chains must be
/// complete, share a start modality and have the same length.
pub fn similarity_series(
    store: &RunStore,
    chains: &[ChainRecord],
    mapping: &DistanceMapping,
    embedder: &dyn Embedder,
    cache: Option<&EmbeddingCache>,
    exec: Execution,
) -> Result<SimilaritySeries> {
    mapping.validate()?;
    let Some(first) = chains.first() else {
        return Err(Error::EmptySeries);
    };
    let expected = comparisons_per_chain(first.spec.start, mapping.direction, first.spec.generations);
    for c in chains {
        if c.spec.start != first.spec.start {
            return Err(Error::MappingMismatch {
                direction: mapping.direction.to_string(),
                start: c.spec.start.to_string(),
            });
        }
        let have = comparisons_per_chain(c.spec.start, mapping.direction, c.generations_done());
        if c.status != ChainStatus::Complete || have < expected {
            return Err(Error::IncompleteChain { chain_id: c.spec.chain_id.clone(), k: have + 1 });
        }
        if have > expected {
            return Err(Error::Invalid(format!(
                "chain `{}` is longer ({} generations) than `{}`",
                c.spec.chain_id, c.spec.generations, first.spec.chain_id
            )));
        }
    }
    let per_chain = exec
        .map(chains, |c| chain_similarities(store, c, mapping, embedder, cache))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate_series(mapping.clone(), &per_chain)
}

/// Mean cumulative drift: the mean of the series values.
pub fn mcd(series: &SimilaritySeries) -> Result<f64> {
    if series.points.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series.points.iter().map(|p| p.s).sum::<f64>() / series.points.len() as f64)
}

/// Unweighted mean of per-mapping MCD values.
pub fn mcd_avg(values: &[(DistanceMapping, f64)]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut seen = BTreeSet::new();
    for (m, _) in values {
        if !seen.insert(m) {
            return Err(Error::DuplicateMapping(m.to_string()));
        }
    }
    Ok(values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    /// MCD keyed by `<direction>/<backbone>`.
    pub mcd: std::collections::BTreeMap<String, f64>,
    pub mcd_avg: f64,
}

impl DriftSummary {
    pub fn from_series(series: &[SimilaritySeries]) -> Result<Self> {
        let per: Vec<(DistanceMapping, f64)> =
            series.iter().map(|s| Ok((s.mapping.clone(), mcd(s)?))).collect::<Result<_>>()?;
        let mcd_avg = mcd_avg(&per)?;
        Ok(DriftSummary { mcd: per.into_iter().map(|(m, v)| (m.to_string(), v)).collect(), mcd_avg })
    }
}

pub fn series_file_name(mapping: &DistanceMapping) -> String {
    format!("series_{}.csv", mapping.key())
}

pub fn write_series_csv(path: &Path, series: &SimilaritySeries) -> Result<()> {
    let mut out = String::from("k,g,S,n_items\n");
    for p in &series.points {
        out.push_str(&format!("{},{},{},{}\n", p.k, p.g, fmt_f64(p.s), series.n_items));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_series_csv(path: &Path, mapping: DistanceMapping) -> Result<SimilaritySeries> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingMetrics(path.into()),
        _ => Error::Parse { path: display.clone(), line: 0, message: e.to_string() },
    })?;
    let headers = reader.headers().map_err(|e| Error::Parse { path: display.clone(), line: 1, message: e.to_string() })?;
    if headers != vec!["k", "g", "S", "n_items"] {
        return Err(Error::Parse { path: display, line: 1, message: "expected header k,g,S,n_items".into() });
    }
    let mut points = Vec::new();
    let mut n_items = 0;
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let perr = |m: String| Error::Parse { path: display.clone(), line, message: m };
        let row = row.map_err(|e| perr(e.to_string()))?;
        let field = |j: usize| row.get(j).ok_or_else(|| perr(format!("missing column {j}")));
        let k = field(0)?.parse().map_err(|e| perr(format!("k: {e}")))?;
        let g = field(1)?.parse().map_err(|e| perr(format!("g: {e}")))?;
        let s = field(2)?.parse().map_err(|e| perr(format!("S: {e}")))?;
        n_items = field(3)?.parse().map_err(|e| perr(format!("n_items: {e}")))?;
        points.push(SeriesPoint { k, g, s });
    }
    Ok(SimilaritySeries { mapping, points, n_items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mapping() -> DistanceMapping {
        DistanceMapping::new(Direction::TextToText, "mpnet").unwrap()
    }

    fn pts(vals: &[f64]) -> Vec<SeriesPoint> {
        vals.iter().enumerate().map(|(i, &s)| SeriesPoint { k: i + 1, g: 2 * (i as u32 + 1), s }).collect()
    }

    fn series(vals: &[f64]) -> SimilaritySeries {
        SimilaritySeries { mapping: mapping(), points: pts(vals), n_items: 1 }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[0.6, 0.8], &[0.8, 0.6]).unwrap() - 0.96).abs() < 1e-15);
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn negative_cosines_are_kept() {
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    }

    #[test]
    fn series_is_the_mean_over_chains() {
        let s = aggregate_series(mapping(), &[pts(&[0.9]), pts(&[0.7])]).unwrap();
        assert!((s.points[0].s - 0.8).abs() < 1e-15);
        assert_eq!(s.n_items, 2);
    }

    #[test]
    fn mcd_examples() {
        assert!((mcd(&series(&[0.7, 0.6, 0.5])).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(mcd(&series(&[0.5; 10])).unwrap(), 0.5);
        assert!(matches!(mcd(&series(&[])), Err(Error::EmptySeries)));
    }

    #[test]
    fn decaying_text_series_mcd_lies_inside_its_range() {
        // Starts near 0.75 and settles around 0.60.
        let vals: Vec<f64> = (1..=10).map(|k| 0.60 + 0.15 * (k as f64).powf(-1.5)).collect();
        let m = mcd(&series(&vals)).unwrap();
        assert!(m > 0.60 && m < 0.75);
    }

    #[test]
    fn mcd_avg_examples() {
        let maps: Vec<DistanceMapping> = [
            (Direction::TextToText, "mpnet"),
            (Direction::TextToText, "clip"),
            (Direction::TextToImage, "clip"),
            (Direction::ImageToImage, "dino"),
        ]
        .iter()
        .map(|(d, b)| DistanceMapping::new(*d, *b).unwrap())
        .collect();
        let vals = [0.6, 0.5, 0.7, 0.4];
        let pairs: Vec<_> = maps.iter().cloned().zip(vals).collect();
        assert!((mcd_avg(&pairs).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(mcd_avg(&pairs[..1].iter().map(|(m, _)| (m.clone(), 0.62)).collect::<Vec<_>>()).unwrap(), 0.62);
        let dup = vec![(maps[0].clone(), 0.1), (maps[0].clone(), 0.2)];
        assert!(matches!(mcd_avg(&dup), Err(Error::DuplicateMapping(_))));
    }

    #[test]
    fn backbone_compatibility() {
        assert!(DistanceMapping::new(Direction::TextToImage, "mpnet").is_err());
        assert!(DistanceMapping::new(Direction::ImageToText, "dino").is_err());
        assert!(DistanceMapping::new(Direction::ImageToImage, "dino").is_ok());
        assert!(DistanceMapping::new(Direction::TextToImage, "clip").is_ok());
    }

    #[test]
    fn comparison_counts_follow_parity() {
        use StartModality::*;
        assert_eq!(comparisons_per_chain(TextFirst, Direction::TextToImage, 4), 2);
        assert_eq!(comparisons_per_chain(TextFirst, Direction::TextToText, 4), 2);
        assert_eq!(comparisons_per_chain(TextFirst, Direction::TextToImage, 5), 3);
        assert_eq!(comparisons_per_chain(ImageFirst, Direction::ImageToImage, 5), 2);
    }

    proptest! {
        #[test]
        fn series_invariant_under_chain_permutation(
            rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..12),
            rot in 0usize..12,
        ) {
            let per: Vec<_> = rows.iter().map(|r| pts(r)).collect();
            let mut shuffled = per.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let a = aggregate_series(mapping(), &per).unwrap();
            let b = aggregate_series(mapping(), &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn mcd_bounded_by_series_and_stable_under_mean_append(vals in proptest::collection::vec(-1.0f64..1.0, 1..30)) {
            let s = series(&vals);
            let m = mcd(&s).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-15 && m <= hi + 1e-15);
            let mut more = vals.clone();
            more.push(m);
            prop_assert!((mcd(&series(&more)).unwrap() - m).abs() < 1e-12);
        }
    }
}
