mod common;

use std::path::Path;
use std::process::Command;

use common::{cli, fixture, metrics_and_report, read_json, run_prompts, tree};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_driftline"));
    c.env_remove("DRIFTLINE_CONFIG");
    c
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_command_prints_usage_and_exits_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage: driftline"), "{err}");
}

#[test]
fn missing_config_file_exits_2() {
    let out = bin().args(["run", "--config", "missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r", &["--chain.generation", "3"]), 2);
}

#[test]
fn config_comes_from_the_environment_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let body = serde_json::json!({
        "run_id": "from_env",
        "output_dir": dir.path().join("runs"),
        "dataset": {"path": fixture("prompts.jsonl"), "limit": 3},
        "chain": {"generations": 4, "width": 32, "height": 32},
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let status = bin().args(["run", "--chain.generations", "2"]).env("DRIFTLINE_CONFIG", &cfg).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = read_json(&dir.path().join("runs/from_env/manifest.json"));
    assert_eq!(manifest["config"]["chain"]["generations"], 2);
    assert_eq!(manifest["config"]["chain"]["width"], 32);
    assert_eq!(manifest["chains"].as_object().unwrap().len(), 3);
    assert_eq!(manifest["backends"]["model"]["model_id"], "synthetic");
}

#[test]
fn fit_writes_sdr_json() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r1", &["--chain.generations", "8"]), 0);
    let run = dir.path().join("r1");
    assert_eq!(cli(&["series", "--run", s(&run)]), 0);
    assert_eq!(cli(&["fit", "--run", s(&run)]), 0);
    let sdr = read_json(&run.join("metrics/sdr.json"));
    assert_eq!(sdr["mappings"].as_object().unwrap().len(), 3);
    assert!(sdr["settings"]["text_first"]["beta"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_without_series_is_a_metric_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r", &["--chain.generations", "6"]), 0);
    assert_eq!(cli(&["fit", "--run", s(&dir.path().join("r"))]), 1);
    assert_eq!(cli(&["fit", "--run", s(&dir.path().join("nope"))]), 2);
}

#[test]
fn prompts_cannot_start_image_first_and_must_not_be_empty() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r", &["--chain.start", "image_first"]), 2);
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "\n").unwrap();
    assert_eq!(
        cli(&["run", "--dataset.path", s(&empty), "--output_dir", s(dir.path()), "--run_id", "e"]),
        2
    );
}

#[test]
fn failed_chains_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let replay = format!("replay:{}", s(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/replay/run")));
    assert_eq!(run_prompts(dir.path(), "r", &["--backends.model", &replay, "--dataset.limit", "2"]), 1);
    let manifest = read_json(&dir.path().join("r/manifest.json"));
    assert_eq!(manifest["counts"]["failed"], 2);
}

#[test]
fn report_without_mgg_warns_and_skips_the_mgg_figures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r", &["--chain.generations", "6"]), 0);
    let run = dir.path().join("r");
    assert_eq!(cli(&["series", "--run", s(&run)]), 0);
    assert_eq!(cli(&["fit", "--run", s(&run)]), 0);
    let out = bin().args(["report", "--run", s(&run)]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mgg.csv"));
    let files = tree(&run.join("report"));
    assert!(!files.contains_key("mgg_heatmap.svg") && !files.contains_key("mcd_vs_mgg.svg"));
    assert_eq!(files.keys().filter(|k| k.starts_with("series_") && k.ends_with(".svg")).count(), 3);
    let summary = read_json(&run.join("report/summary.json"));
    assert!(summary["runs"]["r"]["mgg"].is_null());
}

#[test]
fn report_needs_the_drift_metrics() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_prompts(dir.path(), "r", &["--chain.generations", "6"]), 0);
    let run = dir.path().join("r");
    assert_eq!(cli(&["series", "--run", s(&run)]), 0);
    let out = bin().args(["report", "--run", s(&run)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sdr.json"));
}

#[test]
fn report_passes_metric_values_through_and_rerenders_identically() {
    let dir = tempfile::tempdir().unwrap();
    for (id, rate) in [("a", "0.1"), ("b", "0.3")] {
        assert_eq!(run_prompts(dir.path(), id, &["--chain.generations", "6", "--synthetic.drift_rate", rate]), 0);
        assert_eq!(metrics_and_report(&dir.path().join(id)), 0);
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = dir.path().join("combined");
    let runs = format!("{},{}", s(&a), s(&b));
    assert_eq!(cli(&["report", "--run", &runs, "--out", s(&out)]), 0);
    let first = tree(&out);
    assert_eq!(cli(&["report", "--run", &runs, "--out", s(&out)]), 0);
    assert_eq!(tree(&out), first);

    let summary = read_json(&out.join("summary.json"));
    for (id, run) in [("a", &a), ("b", &b)] {
        let mcd = read_json(&run.join("metrics/mcd.json"));
        assert_eq!(summary["runs"][id]["mcd"], mcd["mcd"]);
        assert_eq!(summary["runs"][id]["mcd_avg"], mcd["mcd_avg"]);
        assert_eq!(summary["runs"][id]["sdr"], read_json(&run.join("metrics/sdr.json")));
        let txt = std::fs::read_to_string(run.join("metrics/mgg.txt")).unwrap();
        let mgg: f64 = txt.trim().strip_prefix("mgg=").unwrap().parse().unwrap();
        assert_eq!(summary["runs"][id]["mgg"].as_f64(), Some(mgg));
    }
    let heat = String::from_utf8(first["mgg_heatmap.svg"].clone()).unwrap();
    assert!(heat.contains(">a (MGG") && heat.contains(">b (MGG"));
    assert_eq!(cli(&["report", "--run", &format!("{},{}", s(&a), s(&a)), "--out", s(&out)]), 2);
}

fn write_index(dir: &Path, source: &str, prefix: &str, n: usize) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("img")).unwrap();
    let mut lines = String::new();
    for i in 0..n {
        let rgb = [(i * 7 % 256) as u8, (i * 13 % 256) as u8, 90];
        let img = image::RgbImage::from_pixel(6, 5, image::Rgb(rgb));
        let name = format!("img/{prefix}{i}.png");
        img.save(dir.join(&name)).unwrap();
        let pair = serde_json::json!({"pair_id": format!("{prefix}{i}"), "source": source, "image_ref": name,
            "caption": format!("a tile numbered {i}")});
        lines.push_str(&format!("{pair}\n"));
    }
    let path = dir.join(format!("{source}.jsonl"));
    std::fs::write(&path, lines).unwrap();
    path
}

#[test]
fn ingest_then_run_image_first_on_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let nocaps = write_index(&dir.path().join("nc"), "nocaps", "n", 210);
    let docci = write_index(&dir.path().join("dc"), "docci", "d", 205);
    let data = dir.path().join("nd400");
    assert_eq!(
        cli(&["ingest", "--nocaps", s(&nocaps), "--docci", s(&docci), "--seed", "4", "--out", s(&data)]),
        0
    );
    let set = read_json(&data.join("nd400.json"));
    let pairs = set["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 400);
    assert!(pairs.iter().all(|p| p["image_hash"].is_string()));

    let code = cli(&[
        "run",
        "--dataset.kind",
        "pairs",
        "--dataset.path",
        s(&data.join("nd400.json")),
        "--dataset.limit",
        "4",
        "--chain.start",
        "image_first",
        "--chain.generations",
        "3",
        "--backends.model",
        "mock",
        "--output_dir",
        s(dir.path()),
        "--run_id",
        "pairs",
    ]);
    assert_eq!(code, 0);
    let manifest = read_json(&dir.path().join("pairs/manifest.json"));
    assert_eq!(manifest["counts"]["complete"], 4);
    assert_eq!(cli(&["mgg", "--run", s(&dir.path().join("pairs"))]), 2);
    assert_eq!(cli(&["ingest", "--nocaps", s(&nocaps)]), 2);
}
