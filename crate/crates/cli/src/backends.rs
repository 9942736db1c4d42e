use std::sync::Arc;

use driftline::backend::{
    Detector, Embedder, HashEmbedder, HttpBackend, MockBackend, ModelBackend, ReplayBackend, SyntheticBackend,
};
use driftline::chain::engine::BackendIdentity;
use driftline::metrics::mgg::GenEvalPrompt;
use driftline::{Error, Result};

use crate::config::RunConfig;

fn is_http(spec: &str) -> bool {
    spec.starts_with("http://") || spec.starts_with("https://")
}

fn synthetic(cfg: &RunConfig, prompts: &[GenEvalPrompt]) -> SyntheticBackend {
    SyntheticBackend::new(cfg.synthetic.clone()).with_prompts(prompts)
}

fn unknown(role: &str, spec: &str) -> Error {
    Error::Config(format!("backends.{role}: unsupported backend `{spec}`"))
}

pub fn model(cfg: &RunConfig, prompts: &[GenEvalPrompt]) -> Result<Arc<dyn ModelBackend>> {
    let spec = cfg.backends.model.as_str();
    Ok(match spec {
        "synthetic" => Arc::new(synthetic(cfg, prompts)),
        "mock" => Arc::new(MockBackend::new("mock", cfg.chain.seed)),
        s if s.starts_with("replay:") => Arc::new(ReplayBackend::from_run_dir(s["replay:".len()..].as_ref())?),
        s if is_http(s) => Arc::new(HttpBackend::connect(s, cfg.retry.clone(), cfg.concurrency)?),
        s => return Err(unknown("model", s)),
    })
}

pub fn embedder(cfg: &RunConfig) -> Result<Arc<dyn Embedder>> {
    let spec = cfg.backends.embed.as_str();
    Ok(match spec {
        "synthetic" => Arc::new(synthetic(cfg, &[])),
        "hash" => Arc::new(HashEmbedder::default()),
        s if is_http(s) => {
            let http = HttpBackend::new(s, "embedder", cfg.retry.clone(), cfg.concurrency)?;
            for (backbone, dim) in &cfg.embedding_dims {
                http.declare_dim(backbone, *dim);
            }
            Arc::new(http)
        }
        s => return Err(unknown("embed", s)),
    })
}

pub fn detector(cfg: &RunConfig, prompts: &[GenEvalPrompt]) -> Result<Arc<dyn Detector>> {
    let spec = cfg.backends.detect.as_str();
    Ok(match spec {
        "synthetic" => Arc::new(synthetic(cfg, prompts)),
        s if is_http(s) => Arc::new(HttpBackend::new(s, "detector", cfg.retry.clone(), cfg.concurrency)?),
        s => return Err(unknown("detect", s)),
    })
}

pub fn identity(spec: &str, model: Option<&dyn ModelBackend>) -> BackendIdentity {
    BackendIdentity {
        endpoint: spec.to_owned(),
        model_id: model.map(|m| m.model_id().to_owned()),
        version: model.and_then(|m| m.version()),
    }
}
