use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use driftline::canonical::{read_json, write_canonical_json};
use driftline::chain::engine::{run_benchmark, BenchmarkItem, BenchmarkPlan, RunManifest};
use driftline::chain::store::RunStore;
use driftline::chain::{ChainRecord, ChainStatus, StartModality};
use driftline::dataset::{self, IngestRoots};
use driftline::metrics::embed::{series_file_name, similarity_series, write_series_csv, DriftSummary, EmbeddingCache};
use driftline::metrics::mgg::{score_run, write_mgg_files, GenEvalPrompt};
use driftline::metrics::sdr::SdrReport;
use driftline::par::Execution;
use driftline::{Error, Result};

use crate::config::{config_source, resolve, DatasetKind, RunConfig};
use crate::{backends, report, EXIT_FAILURE, EXIT_OK};

pub fn ingest(nocaps: &Path, docci: &Path, seed: u64, out: &Path, concurrency: usize) -> Result<i32> {
    let selection = dataset::sample_nd400(&dataset::load_index(nocaps)?, &dataset::load_index(docci)?, seed)?;
    let parent = |p: &Path| p.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let roots = IngestRoots { nocaps: parent(nocaps), docci: parent(docci) };
    let set = dataset::ingest(&selection, &roots, out, concurrency)?;
    println!("{} pairs written to {} (fingerprint {})", set.pairs.len(), out.join("nd400.json").display(), set.fingerprint);
    Ok(EXIT_OK)
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.dataset.path.as_deref().ok_or_else(|| Error::Config("dataset.path is not set".into()))
}

fn load_prompts(cfg: &RunConfig) -> Result<Vec<GenEvalPrompt>> {
    let path = dataset_path(cfg)?;
    let mut prompts = dataset::load_geneval_rewritten(path)?;
    if prompts.is_empty() {
        return Err(Error::Config(format!("prompt file {} has no prompts", path.display())));
    }
    if let Some(n) = cfg.dataset.limit {
        prompts.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id));
        prompts.truncate(n);
    }
    Ok(prompts)
}

fn load_items(cfg: &RunConfig) -> Result<(Vec<BenchmarkItem>, Vec<GenEvalPrompt>)> {
    match cfg.dataset.kind {
        DatasetKind::Prompts => {
            if cfg.chain.start == StartModality::ImageFirst {
                return Err(Error::Config("image-first chains need a pairs dataset".into()));
            }
            let prompts = load_prompts(cfg)?;
            Ok((dataset::prompt_items(&prompts), prompts))
        }
        DatasetKind::Pairs => {
            let mut items = dataset::load_pairs(dataset_path(cfg)?)?;
            if let Some(n) = cfg.dataset.limit {
                items.sort_by(|a, b| a.id.cmp(&b.id));
                items.truncate(n);
            }
            Ok((items, Vec::new()))
        }
    }
}

pub fn run(config: Option<&Path>, overrides: &[(String, String)]) -> Result<i32> {
    let cfg = resolve(config_source(config)?, overrides)?;
    let (items, prompts) = load_items(&cfg)?;
    let model = backends::model(&cfg, &prompts)?;
    let mut ids = BTreeMap::new();
    ids.insert("model".to_owned(), backends::identity(&cfg.backends.model, Some(model.as_ref())));
    ids.insert("embed".to_owned(), backends::identity(&cfg.backends.embed, None));
    ids.insert("detect".to_owned(), backends::identity(&cfg.backends.detect, None));
    let plan = BenchmarkPlan {
        run_id: cfg.run_id.clone(),
        setup: cfg.setup(),
        items,
        concurrency: cfg.concurrency,
        config: serde_json::to_value(&cfg)?,
        backends: ids,
    };
    let store = RunStore::new(cfg.run_dir());
    let manifest = run_benchmark(&plan, model.as_ref(), &store)?;
    println!(
        "{}: {} complete, {} partial, {} failed",
        store.root().display(),
        manifest.counts["complete"],
        manifest.counts["partial"],
        manifest.counts["failed"]
    );
    Ok(if manifest.any_failed() { EXIT_FAILURE } else { EXIT_OK })
}

/// A run directory plus its stored config with flag overrides applied.
pub struct OpenRun {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub manifest: RunManifest,
    pub store: RunStore,
}

impl OpenRun {
    pub fn open(dir: &Path, overrides: &[(String, String)]) -> Result<OpenRun> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(Error::Config(format!("{} is not a run directory (no manifest.json)", dir.display())));
        }
        let manifest: RunManifest = read_json(&manifest_path)?;
        let config = resolve(Some(manifest.config.clone()), overrides)?;
        Ok(OpenRun { dir: dir.to_owned(), config, manifest, store: RunStore::new(dir) })
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.dir.join("metrics")
    }

    pub fn complete_chains(&self) -> Result<Vec<ChainRecord>> {
        let mut records = self.store.load_records()?;
        records.retain(|r| r.status == ChainStatus::Complete);
        if records.is_empty() {
            return Err(Error::EmptySeries);
        }
        Ok(records)
    }
}

pub fn series(dir: &Path, overrides: &[(String, String)]) -> Result<i32> {
    let run = OpenRun::open(dir, overrides)?;
    let chains = run.complete_chains()?;
    let embedder = backends::embedder(&run.config)?;
    let cache = EmbeddingCache::new();
    let mut all = Vec::new();
    for mapping in run.config.parsed_mappings()? {
        let s = similarity_series(&run.store, &chains, &mapping, embedder.as_ref(), Some(&cache), Execution::Parallel)?;
        write_series_csv(&run.metrics_dir().join(series_file_name(&mapping)), &s)?;
        all.push(s);
    }
    let summary = DriftSummary::from_series(&all)?;
    write_canonical_json(&run.metrics_dir().join("mcd.json"), &summary)?;
    for (m, v) in &summary.mcd {
        println!("MCD {m} = {v:.4}");
    }
    println!("MCD_avg = {:.4}", summary.mcd_avg);
    Ok(EXIT_OK)
}

pub fn fit(dir: &Path, overrides: &[(String, String)]) -> Result<i32> {
    let run = OpenRun::open(dir, overrides)?;
    let series = report::read_series(&run.metrics_dir(), &run.config.parsed_mappings()?)?;
    let sdr = SdrReport::fit(&series, run.config.fit_domain, Execution::Parallel)?;
    write_canonical_json(&run.metrics_dir().join("sdr.json"), &sdr)?;
    for (setting, p) in &sdr.settings {
        println!("{setting}: alpha={:.4} beta={:.4} gamma={:.4}", p.alpha, p.beta, p.gamma);
    }
    Ok(EXIT_OK)
}

pub fn mgg(dir: &Path, overrides: &[(String, String)]) -> Result<i32> {
    let run = OpenRun::open(dir, overrides)?;
    if run.config.dataset.kind != DatasetKind::Prompts {
        return Err(Error::Config("mgg needs a prompts dataset".into()));
    }
    let prompts = load_prompts(&run.config)?;
    let detector = backends::detector(&run.config, &prompts)?;
    let chains = run.complete_chains()?;
    let rep = score_run(
        &run.store,
        &chains,
        &prompts,
        detector.as_ref(),
        run.config.tau,
        run.config.nms_iou,
        Execution::Parallel,
    )?;
    write_mgg_files(&run.metrics_dir(), &rep)?;
    println!("MGG = {:.4} (first generation {:.4})", rep.mgg, rep.first());
    Ok(EXIT_OK)
}

pub fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let Some(first) = runs.first() else {
        return Err(Error::Config("--run needs at least one run directory".into()));
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| first.join("report"));
    let opened = runs.iter().map(|d| OpenRun::open(d, &[])).collect::<Result<Vec<_>>>()?;
    for warning in report::render(&opened, &out)? {
        eprintln!("warning: {warning}");
    }
    Ok(EXIT_OK)
}
