#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn argv(parts: &[&str]) -> Vec<String> {
    parts.iter().map(|s| s.to_string()).collect()
}

pub fn cli(parts: &[&str]) -> i32 {
    driftline_cli::dispatch(&argv(parts))
}

/// Synthetic prompt run into `out/<run_id>` with small images.
pub fn run_prompts(out: &Path, run_id: &str, extra: &[&str]) -> i32 {
    let prompts = fixture("prompts.jsonl");
    let mut args = vec![
        "run",
        "--dataset.path",
        prompts.to_str().unwrap(),
        "--output_dir",
        out.to_str().unwrap(),
        "--run_id",
        run_id,
        "--chain.width",
        "96",
        "--chain.height",
        "96",
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

/// `series`, `fit`, `mgg` and `report` on one run; returns the first
/// non-zero exit code.
pub fn metrics_and_report(run: &Path) -> i32 {
    let r = run.to_str().unwrap();
    for cmd in ["series", "fit", "mgg", "report"] {
        let code = cli(&[cmd, "--run", r]);
        if code != 0 {
            return code;
        }
    }
    0
}

/// Relative path -> bytes for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Manifest JSON without its wall-clock fields.
pub fn manifest_sans_clock(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let obj = v.as_object_mut().unwrap();
    obj.remove("started_at");
    obj.remove("finished_at");
    v
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
