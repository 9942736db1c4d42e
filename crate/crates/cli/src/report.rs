//! Report rendering: series charts with fitted overlays, the MGG heatmap,
//! the MCD-vs-MGG scatter and `summary.json`. Output depends only on the
//! metric files of the given runs.

use std::collections::BTreeMap;
use std::path::Path;

use driftline::canonical::{read_json, write_atomic, write_canonical_json};
use driftline::metrics::embed::{read_series_csv, series_file_name, DistanceMapping, DriftSummary, SimilaritySeries};
use driftline::metrics::mgg::{read_mgg_csv, MggReport, Task};
use driftline::metrics::sdr::{series_points, FitDomain, PowerLawParams, SdrReport};
use driftline::{Error, Result};
use serde::Serialize;

use crate::commands::OpenRun;
use crate::svg::{self, HeatBlock, Line, Point};

pub fn read_series(metrics_dir: &Path, mappings: &[DistanceMapping]) -> Result<Vec<SimilaritySeries>> {
    mappings.iter().map(|m| read_series_csv(&metrics_dir.join(series_file_name(m)), m.clone())).collect()
}

fn read_required<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingMetrics(path.to_owned()));
    }
    read_json(path)
}

/// Everything the report needs from one run.
pub struct RunMetrics {
    pub run_id: String,
    pub model_id: Option<String>,
    pub start: String,
    pub series: Vec<SimilaritySeries>,
    pub drift: DriftSummary,
    pub sdr: SdrReport,
    pub mgg: Option<MggReport>,
}

impl RunMetrics {
    /// Loads metric files; a missing MGG file is reported as a warning.
    pub fn load(run: &OpenRun) -> Result<(RunMetrics, Option<String>)> {
        let dir = run.metrics_dir();
        let series = read_series(&dir, &run.config.parsed_mappings()?)?;
        let drift: DriftSummary = read_required(&dir.join("mcd.json"))?;
        let sdr: SdrReport = read_required(&dir.join("sdr.json"))?;
        let (mgg, warning) = match read_mgg_csv(&dir.join("mgg.csv")) {
            Ok(r) => (Some(r), None),
            Err(e @ Error::MissingMetrics(_)) => (None, Some(format!("{e}; run `{}` has no MGG", run.manifest.run_id))),
            Err(e) => return Err(e),
        };
        let metrics = RunMetrics {
            run_id: run.manifest.run_id.clone(),
            model_id: run.manifest.backends.get("model").and_then(|b| b.model_id.clone()),
            start: run.config.chain.start.to_string(),
            series,
            drift,
            sdr,
            mgg,
        };
        Ok((metrics, warning))
    }
}

#[derive(Debug, Serialize)]
struct RunSummary<'a> {
    model_id: Option<&'a str>,
    start: &'a str,
    mcd: &'a BTreeMap<String, f64>,
    mcd_avg: f64,
    sdr: &'a SdrReport,
    mgg: Option<f64>,
    mgg_first: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    runs: BTreeMap<&'a str, RunSummary<'a>>,
}

fn summary(runs: &[RunMetrics]) -> Summary<'_> {
    let runs = runs
        .iter()
        .map(|r| {
            let s = RunSummary {
                model_id: r.model_id.as_deref(),
                start: &r.start,
                mcd: &r.drift.mcd,
                mcd_avg: r.drift.mcd_avg,
                sdr: &r.sdr,
                mgg: r.mgg.as_ref().map(|m| m.mgg),
                mgg_first: r.mgg.as_ref().map(MggReport::first),
            };
            (r.run_id.as_str(), s)
        })
        .collect();
    Summary { runs }
}

fn fitted_curve(p: &PowerLawParams, x0: f64, x1: f64) -> Vec<(f64, f64)> {
    let steps = ((x1 - x0) * 4.0).ceil().max(1.0) as usize;
    (0..=steps).map(|i| x0 + (x1 - x0) * i as f64 / steps as f64).map(|x| (x, p.value_at(x))).collect()
}

type SeriesEntry<'a> = (&'a RunMetrics, &'a SimilaritySeries);

fn series_chart(mapping: &str, domain: FitDomain, entries: &[SeriesEntry]) -> String {
    let mut lines = Vec::new();
    for (i, (run, s)) in entries.iter().enumerate() {
        let pts = series_points(s, domain);
        if let (Some(first), Some(last), Some(p)) = (pts.first(), pts.last(), run.sdr.mappings.get(mapping)) {
            lines.push(Line {
                label: format!("{} fit", run.run_id),
                points: fitted_curve(p, first.0, last.0),
                dashed: true,
                markers: false,
                color: i,
            });
        }
        lines.push(Line { label: run.run_id.clone(), points: pts, dashed: false, markers: true, color: i });
    }
    let x_label = match domain {
        FitDomain::K => "k",
        FitDomain::G => "g",
    };
    svg::line_chart(&format!("Similarity to origin: {mapping}"), x_label, "S", &lines)
}

fn heat_blocks(runs: &[RunMetrics]) -> Vec<HeatBlock> {
    runs.iter()
        .filter_map(|r| {
            let m = r.mgg.as_ref()?;
            let mut rows: Vec<(String, Vec<f64>)> = Task::ALL
                .iter()
                .map(|t| (t.as_str().to_owned(), m.rows.iter().map(|row| row.score.tasks[t.index()]).collect()))
                .collect();
            rows.push(("overall".into(), m.rows.iter().map(|row| row.score.overall).collect()));
            Some(HeatBlock { title: format!("{} (MGG {:.3})", r.run_id, m.mgg), rows })
        })
        .collect()
}

/// Writes the report into `out` and returns warnings for skipped parts.
pub fn render(runs: &[OpenRun], out: &Path) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let mut metrics = Vec::with_capacity(runs.len());
    for run in runs {
        let (m, w) = RunMetrics::load(run)?;
        if metrics.iter().any(|x: &RunMetrics| x.run_id == m.run_id) {
            return Err(Error::Config(format!("run id `{}` given twice", m.run_id)));
        }
        warnings.extend(w);
        metrics.push(m);
    }

    let mut by_mapping: BTreeMap<String, (String, Vec<SeriesEntry>)> = BTreeMap::new();
    for r in &metrics {
        for s in &r.series {
            by_mapping
                .entry(s.mapping.to_string())
                .or_insert_with(|| (series_file_name(&s.mapping).replace(".csv", ".svg"), Vec::new()))
                .1
                .push((r, s));
        }
    }
    for (mapping, (file, entries)) in &by_mapping {
        let domain = entries[0].0.sdr.fit_domain;
        write_atomic(&out.join(file), series_chart(mapping, domain, entries).as_bytes())?;
    }

    let blocks = heat_blocks(&metrics);
    if blocks.is_empty() {
        warnings.push("no run has MGG metrics; skipping mgg_heatmap.svg and mcd_vs_mgg.svg".into());
    } else {
        write_atomic(&out.join("mgg_heatmap.svg"), svg::heatmap("MGG per generation and task", &blocks).as_bytes())?;
        let points: Vec<Point> = metrics
            .iter()
            .filter_map(|r| Some(Point { label: r.run_id.clone(), x: r.mgg.as_ref()?.mgg, y: r.drift.mcd_avg }))
            .collect();
        write_atomic(&out.join("mcd_vs_mgg.svg"), svg::scatter("MCD vs MGG", "MGG", "MCD_avg", &points).as_bytes())?;
    }

    write_canonical_json(&out.join("summary.json"), &summary(&metrics))?;
    Ok(warnings)
}
