use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use driftline::backend::{ImageSize, RetryPolicy, SyntheticConfig};
use driftline::chain::{is_safe_id, ChainSetup, StartModality, DEFAULT_GENERATIONS, DEFAULT_I2T_INSTRUCTION};
use driftline::metrics::embed::DistanceMapping;
use driftline::metrics::mgg::{DEFAULT_NMS_IOU, DEFAULT_TAU};
use driftline::metrics::sdr::FitDomain;
use driftline::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const CONFIG_ENV: &str = "DRIFTLINE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// JSON-lines prompt file with task expectations.
    #[default]
    Prompts,
    /// `nd400.json` written by `ingest`.
    Pairs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    /// Keep only the first `limit` items (by id).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub start: StartModality,
    pub generations: u32,
    pub seed: u64,
    pub i2t_instruction: String,
    pub width: u32,
    pub height: u32,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            start: StartModality::TextFirst,
            generations: DEFAULT_GENERATIONS,
            seed: 0,
            i2t_instruction: DEFAULT_I2T_INSTRUCTION.into(),
            width: 512,
            height: 512,
        }
    }
}

/// Backend spec strings: `synthetic`, `mock`, `hash`, `replay:<run dir>`
/// or an `http(s)://` base URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub model: String,
    pub embed: String,
    pub detect: String,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig { model: "synthetic".into(), embed: "synthetic".into(), detect: "synthetic".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub chain: ChainConfig,
    pub backends: BackendsConfig,
    pub synthetic: SyntheticConfig,
    /// `<direction>/<backbone>` strings; empty means the defaults for the
    /// chain start.
    pub mappings: Vec<String>,
    pub tau: f64,
    pub nms_iou: f64,
    pub fit_domain: FitDomain,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    /// Declared output dimension per backbone for HTTP embedders.
    pub embedding_dims: BTreeMap<String, usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_id: "run".into(),
            output_dir: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            chain: ChainConfig::default(),
            backends: BackendsConfig::default(),
            synthetic: SyntheticConfig::default(),
            mappings: Vec::new(),
            tau: DEFAULT_TAU,
            nms_iou: DEFAULT_NMS_IOU,
            fit_domain: FitDomain::K,
            concurrency: 4,
            retry: RetryPolicy::default(),
            embedding_dims: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn setup(&self) -> ChainSetup {
        ChainSetup {
            start: self.chain.start,
            generations: self.chain.generations,
            seed: self.chain.seed,
            i2t_instruction: self.chain.i2t_instruction.clone(),
            image_size: ImageSize::new(self.chain.width, self.chain.height),
        }
    }

    pub fn parsed_mappings(&self) -> Result<Vec<DistanceMapping>> {
        self.mappings.iter().map(|m| m.parse()).collect()
    }

    fn finish(mut self) -> Result<Self> {
        if !is_safe_id(&self.run_id) {
            return Err(Error::Config(format!("run_id `{}` must be a file-name-safe string", self.run_id)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Config(format!("nms_iou {} outside (0, 1]", self.nms_iou)));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        if self.chain.width == 0 || self.chain.height == 0 {
            return Err(Error::Config("chain.width and chain.height must be positive".into()));
        }
        if self.synthetic.drift_rate.is_nan() || self.synthetic.drift_rate < 0.0 || self.synthetic.dim < 2 {
            return Err(Error::Config("synthetic.drift_rate must be >= 0 and synthetic.dim >= 2".into()));
        }
        if self.mappings.is_empty() {
            self.mappings = DistanceMapping::defaults_for(self.chain.start).iter().map(|m| m.to_string()).collect();
        }
        let mappings = self.parsed_mappings().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(m) = mappings.iter().find(|m| m.direction.start() != self.chain.start) {
            return Err(Error::Config(format!("mapping {m} does not apply to {} chains", self.chain.start)));
        }
        Ok(self)
    }
}

/// Sets `value` at a dotted key path, creating intermediate objects.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_owned(), value);
            return Ok(());
        }
        cur = obj.entry(*part).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Flag values are JSON when they parse as JSON, plain strings otherwise.
/// `mappings` also accepts a comma-separated list.
pub fn flag_value(key: &str, raw: &str) -> Value {
    if key == "mappings" && !raw.trim_start().starts_with('[') {
        return Value::Array(raw.split(',').filter(|s| !s.is_empty()).map(|s| Value::String(s.trim().into())).collect());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("config {} must be a JSON object", path.display())));
    }
    Ok(v)
}

/// Defaults, then `base` (a config file or a stored resolved config), then
/// flag overrides.
pub fn resolve(base: Option<Value>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut v = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    if let Some(b) = base {
        merge(&mut v, b);
    }
    for (k, raw) in overrides {
        set_path(&mut v, k, flag_value(k, raw))?;
    }
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    cfg.finish()
}

/// Config file from `--config`, else `$DRIFTLINE_CONFIG`, else none.
pub fn config_source(explicit: Option<&Path>) -> Result<Option<Value>> {
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    };
    path.map(|p| read_config_file(&p)).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_are_complete() {
        let cfg = resolve(None, &[]).unwrap();
        assert_eq!(cfg.chain.generations, 20);
        assert_eq!(cfg.chain.i2t_instruction, "Describe this image");
        assert_eq!(cfg.tau, 0.3);
        assert_eq!(cfg.nms_iou, 0.5);
        assert_eq!(cfg.mappings, vec!["text_to_text/mpnet", "text_to_text/clip", "text_to_image/clip"]);
    }

    #[test]
    fn flags_override_the_file() {
        let file = serde_json::json!({"chain": {"generations": 6, "seed": 9}, "tau": 0.4});
        let cfg = resolve(Some(file), &kv(&[("chain.generations", "8"), ("run_id", "r2"), ("mappings", "text_to_text/clip")]))
            .unwrap();
        assert_eq!((cfg.chain.generations, cfg.chain.seed, cfg.tau), (8, 9, 0.4));
        assert_eq!(cfg.run_id, "r2");
        assert_eq!(cfg.mappings, vec!["text_to_text/clip"]);
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        assert!(matches!(resolve(None, &kv(&[("chain.gens", "3")])), Err(Error::Config(_))));
        assert!(matches!(resolve(None, &kv(&[("tau", "1.5")])), Err(Error::Config(_))));
        assert!(matches!(resolve(None, &kv(&[("mappings", "image_to_image/dino")])), Err(Error::Config(_))));
        assert!(matches!(resolve(None, &kv(&[("run_id", "../x")])), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = resolve(None, &kv(&[("chain.start", "image_first")])).unwrap();
        let again = resolve(Some(serde_json::to_value(&cfg).unwrap()), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.mappings.len(), 3);
    }
}
