use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use driftline::backend::{ImageSize, SyntheticBackend, SyntheticConfig};
use driftline::chain::{run_benchmark, BenchmarkItem, BenchmarkPlan, ChainSetup, RunStore, StartModality};
use driftline::metrics::embed::{similarity_series, DistanceMapping, EmbeddingCache};
use driftline::metrics::sdr::fit_points;
use driftline::par::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn items(n: usize) -> Vec<BenchmarkItem> {
    (0..n).map(|i| BenchmarkItem { id: format!("b{i:03}"), text: format!("bench scene {i}"), image: None }).collect()
}

fn plan(n: usize, generations: u32, concurrency: usize) -> BenchmarkPlan {
    BenchmarkPlan {
        run_id: "bench".into(),
        setup: ChainSetup {
            start: StartModality::TextFirst,
            generations,
            seed: 1,
            i2t_instruction: "Describe this image".into(),
            image_size: ImageSize::new(64, 64),
        },
        items: items(n),
        concurrency,
        config: serde_json::json!({}),
        backends: Default::default(),
    }
}

fn series_batch() -> Vec<Vec<(f64, f64)>> {
    (0..64)
        .map(|i| {
            let (a, b, c) = (0.3 + 0.5 * (i as f64 / 64.0), 0.05 + 0.4 * ((i * 7 % 64) as f64 / 64.0), 0.1);
            (1..=10).map(|k| k as f64).map(|k| (k, a * k.powf(-b) + c + 0.001 * ((k * 13.0 + i as f64).sin()))).collect()
        })
        .collect()
}

fn sdr_fits(c: &mut Criterion) {
    let batch = series_batch();
    let mut g = c.benchmark_group("sdr_fit_64_series");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| exec.map(&batch, |s| fit_points(black_box(s)).unwrap())));
    }
    g.finish();
}

fn similarity(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let backend = SyntheticBackend::new(SyntheticConfig::default());
    let store = RunStore::new(dir.path());
    run_benchmark(&plan(32, 20, 8), &backend, &store).unwrap();
    let chains = store.load_records().unwrap();
    let mapping: DistanceMapping = "text_to_image/clip".parse().unwrap();
    let mut g = c.benchmark_group("similarity_series_32x20");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                let cache = EmbeddingCache::new();
                similarity_series(&store, &chains, &mapping, &backend, Some(&cache), exec).unwrap()
            })
        });
    }
    g.finish();
}

fn chains(c: &mut Criterion) {
    let backend = SyntheticBackend::new(SyntheticConfig::default());
    let mut g = c.benchmark_group("run_benchmark_16x10");
    g.sample_size(10);
    for concurrency in [1usize, 8] {
        g.bench_with_input(BenchmarkId::new("concurrency", concurrency), &concurrency, |b, &n| {
            b.iter_batched(
                || tempfile::tempdir().unwrap(),
                |dir| run_benchmark(&plan(16, 10, n), &backend, &RunStore::new(dir.path())).unwrap(),
                BatchSize::PerIteration,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, sdr_fits, similarity, chains);
criterion_main!(benches);
