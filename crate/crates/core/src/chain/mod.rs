//! Alternating T2I / I2T chains: specification, planning, persistence and
//! execution.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::{ImageSize, Meta, PayloadKind};
use crate::error::{Error, Result};

pub mod engine;
pub mod store;

pub use engine::{resume_chain, run_benchmark, run_chain, BenchmarkItem, BenchmarkPlan, ChainSetup, RunManifest};
pub use store::RunStore;

pub const DEFAULT_GENERATIONS: u32 = 20;
pub const DEFAULT_I2T_INSTRUCTION: &str = "Describe this image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartModality {
    TextFirst,
    ImageFirst,
}

impl StartModality {
    pub fn origin_modality(self) -> Modality {
        match self {
            StartModality::TextFirst => Modality::Text,
            StartModality::ImageFirst => Modality::Image,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StartModality::TextFirst => "text_first",
            StartModality::ImageFirst => "image_first",
        }
    }
}

impl fmt::Display for StartModality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Text => Modality::Image,
            Modality::Image => Modality::Text,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Modality::Text => "txt",
            Modality::Image => "png",
        }
    }

    pub fn payload_kind(self) -> PayloadKind {
        match self {
            Modality::Text => PayloadKind::Text,
            Modality::Image => PayloadKind::Image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    T2I,
    I2T,
}

/// Reference to a stored origin image plus the digest it must match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Text(String),
    Image(ImageRef),
}

impl Origin {
    pub fn modality(&self) -> Modality {
        match self {
            Origin::Text(_) => Modality::Text,
            Origin::Image(_) => Modality::Image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub chain_id: String,
    pub start: StartModality,
    pub origin: Origin,
    pub generations: u32,
    pub model_id: String,
    pub i2t_instruction: String,
    pub seed: u64,
    pub image_size: ImageSize,
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if !is_safe_id(&self.chain_id) {
            return Err(Error::Config(format!("chain id `{}` must be a non-empty file-name-safe string", self.chain_id)));
        }
        if self.origin.modality() != self.start.origin_modality() {
            return Err(Error::Config(format!(
                "chain `{}`: {} chains need a {:?} origin",
                self.chain_id,
                self.start,
                self.start.origin_modality()
            )));
        }
        if self.image_size.width == 0 || self.image_size.height == 0 {
            return Err(Error::Config(format!("chain `{}`: image size must be non-zero", self.chain_id)));
        }
        Ok(())
    }

    /// Modality of the artifact at generation `g` (`g = 0` is the origin).
    pub fn modality_at(&self, g: u32) -> Modality {
        let origin = self.start.origin_modality();
        if g % 2 == 0 {
            origin
        } else {
            origin.other()
        }
    }

    /// Seed passed to the backend for the T2I step at generation `g`.
    pub fn step_seed(&self, g: u32) -> u64 {
        crate::seed::derive_seed(&[&self.seed.to_le_bytes(), &g.to_le_bytes()])
    }
}

/// Ids become directory names, so they are restricted to a portable set.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Replaces characters outside the portable id set with `_`.
pub fn sanitize_id(raw: &str) -> String {
    let s: String = raw.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    if is_safe_id(&s) {
        s
    } else {
        format!("_{s}")
    }
}

/// Step kinds for generations `1..=G`. Text-first chains open with T2I,
/// image-first chains with I2T, and the kinds alternate from there.
pub fn plan_chain(spec: &ChainSpec) -> Vec<(u32, StepKind)> {
    (1..=spec.generations)
        .map(|g| {
            let kind = match spec.modality_at(g) {
                Modality::Image => StepKind::T2I,
                Modality::Text => StepKind::I2T,
            };
            (g, kind)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationArtifact {
    pub g: u32,
    pub modality: Modality,
    /// File name inside the chain directory.
    pub file: String,
    pub parent_g: u32,
    pub backend_meta: Meta,
    pub content_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub spec: ChainSpec,
    pub artifacts: Vec<GenerationArtifact>,
    pub status: ChainStatus,
    pub error: Option<String>,
}

impl ChainRecord {
    pub fn new(spec: ChainSpec) -> Self {
        let status = if spec.generations == 0 { ChainStatus::Complete } else { ChainStatus::Partial };
        ChainRecord { spec, artifacts: Vec::new(), status, error: None }
    }

    pub fn generations_done(&self) -> u32 {
        self.artifacts.len() as u32
    }

    /// Checks contiguity, alternation and the status/progress relation.
    pub fn validate(&self) -> Result<()> {
        let mut prev = self.spec.start.origin_modality();
        for (i, a) in self.artifacts.iter().enumerate() {
            let g = i as u32 + 1;
            if a.g != g || a.parent_g != g - 1 {
                return Err(Error::Invalid(format!("chain `{}`: artifact {i} has g={}", self.spec.chain_id, a.g)));
            }
            if a.modality == prev || a.modality != self.spec.modality_at(g) {
                return Err(Error::Invalid(format!("chain `{}`: modality does not alternate at g={g}", self.spec.chain_id)));
            }
            prev = a.modality;
        }
        let complete = self.generations_done() == self.spec.generations;
        if (self.status == ChainStatus::Complete) != complete {
            return Err(Error::Invalid(format!(
                "chain `{}`: status {:?} with {}/{} generations",
                self.spec.chain_id,
                self.status,
                self.generations_done(),
                self.spec.generations
            )));
        }
        Ok(())
    }
}

pub fn artifact_file_name(g: u32, modality: Modality) -> String {
    format!("g{g:04}.{}", modality.extension())
}
