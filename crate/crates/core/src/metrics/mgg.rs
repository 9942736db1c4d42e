//! Compositional scoring of generated images over repeated generations.
//!
//! Each prompt is checked against its structured expectations using
//! detector output (thresholded and de-duplicated), a CIELAB color rule and
//! a centroid position rule. Per image index k the six task accuracies are
//! averaged into an overall score; the mean of those is the MGG scalar.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backend::image_io::decode;
use crate::backend::{Detection, Detector};
use crate::canonical::{fmt_f64, write_atomic};
use crate::chain::{sanitize_id, ChainRecord, Modality, RunStore, StartModality};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const DEFAULT_TAU: f64 = 0.3;
pub const DEFAULT_NMS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "single_object")]
    SingleObject,
    #[serde(rename = "two_object")]
    TwoObject,
    #[serde(rename = "counting")]
    Counting,
    #[serde(rename = "colors")]
    Colors,
    #[serde(rename = "position")]
    Position,
    #[serde(rename = "color_attr")]
    ColorAttribute,
}

impl Task {
    pub const ALL: [Task; 6] =
        [Task::SingleObject, Task::TwoObject, Task::Counting, Task::Colors, Task::Position, Task::ColorAttribute];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SingleObject => "single_object",
            Task::TwoObject => "two_object",
            Task::Counting => "counting",
            Task::Colors => "colors",
            Task::Position => "position",
            Task::ColorAttribute => "color_attr",
        }
    }

    pub fn index(self) -> usize {
        Task::ALL.iter().position(|t| *t == self).expect("task listed in ALL")
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorName {
    Red,
    Orange,
    Yellow,
    Green,
    Blue,
    Purple,
    Pink,
    Brown,
    Black,
    White,
    Gray,
}

impl ColorName {
    pub const ALL: [ColorName; 11] = [
        ColorName::Red,
        ColorName::Orange,
        ColorName::Yellow,
        ColorName::Green,
        ColorName::Blue,
        ColorName::Purple,
        ColorName::Pink,
        ColorName::Brown,
        ColorName::Black,
        ColorName::White,
        ColorName::Gray,
    ];

    /// CSS basic color value.
    pub fn srgb(self) -> [u8; 3] {
        match self {
            ColorName::Red => [0xFF, 0x00, 0x00],
            ColorName::Orange => [0xFF, 0xA5, 0x00],
            ColorName::Yellow => [0xFF, 0xFF, 0x00],
            ColorName::Green => [0x00, 0x80, 0x00],
            ColorName::Blue => [0x00, 0x00, 0xFF],
            ColorName::Purple => [0x80, 0x00, 0x80],
            ColorName::Pink => [0xFF, 0xC0, 0xCB],
            ColorName::Brown => [0xA5, 0x2A, 0x2A],
            ColorName::Black => [0x00, 0x00, 0x00],
            ColorName::White => [0xFF, 0xFF, 0xFF],
            ColorName::Gray => [0x80, 0x80, 0x80],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Orange => "orange",
            ColorName::Yellow => "yellow",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Purple => "purple",
            ColorName::Pink => "pink",
            ColorName::Brown => "brown",
            ColorName::Black => "black",
            ColorName::White => "white",
            ColorName::Gray => "gray",
        }
    }
}

impl fmt::Display for ColorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ColorName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown color `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorBinding {
    pub object: String,
    pub color: ColorName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub kind: Relation,
    pub subject: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    pub objects: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub colors: Vec<ColorBinding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation: Option<RelationSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenEvalPrompt {
    pub prompt_id: String,
    pub task: Task,
    pub text: String,
    pub expectations: Expectations,
}

impl GenEvalPrompt {
    /// Checks that exactly the expectation fields the task needs are set.
    /// The message names the offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let e = &self.expectations;
        if self.prompt_id.is_empty() {
            return Err("`prompt_id` must be non-empty".into());
        }
        if self.text.trim().is_empty() {
            return Err("`text` must be non-empty".into());
        }
        if e.objects.iter().any(|o| o.trim().is_empty()) {
            return Err("`expectations.objects` contains an empty label".into());
        }
        let (n_objects, needs_count, n_colors, needs_relation) = match self.task {
            Task::SingleObject => (1, false, 0, false),
            Task::TwoObject => (2, false, 0, false),
            Task::Counting => (1, true, 0, false),
            Task::Colors => (1, false, 1, false),
            Task::Position => (2, false, 0, true),
            Task::ColorAttribute => (2, false, 2, false),
        };
        let task = self.task;
        if e.objects.len() != n_objects {
            return Err(format!("{task} needs {n_objects} entries in `expectations.objects`, got {}", e.objects.len()));
        }
        if n_objects == 2 && e.objects[0] == e.objects[1] {
            return Err("`expectations.objects` must name two different labels".into());
        }
        match (needs_count, e.count) {
            (true, None) => return Err(format!("{task} requires `expectations.count`")),
            (true, Some(0)) => return Err("`expectations.count` must be at least 1".into()),
            (false, Some(_)) => return Err(format!("{task} must not set `expectations.count`")),
            _ => {}
        }
        if e.colors.len() != n_colors {
            return Err(if n_colors == 0 {
                format!("{task} must not set `expectations.colors`")
            } else {
                format!("{task} requires {n_colors} entries in `expectations.colors`")
            });
        }
        for (i, c) in e.colors.iter().enumerate() {
            if !e.objects.contains(&c.object) {
                return Err(format!("`expectations.colors[{i}].object` `{}` is not a listed object", c.object));
            }
            if e.colors[..i].iter().any(|d| d.object == c.object) {
                return Err(format!("`expectations.colors[{i}].object` `{}` is bound twice", c.object));
            }
        }
        match (&e.relation, needs_relation) {
            (None, true) => return Err(format!("{task} requires `expectations.relation`")),
            (Some(_), false) => return Err(format!("{task} must not set `expectations.relation`")),
            (Some(r), true) => {
                if r.kind == Relation::None {
                    return Err("`expectations.relation.kind` must be a spatial relation".into());
                }
                if r.subject != e.objects[0] || r.reference != e.objects[1] {
                    return Err(
                        "`expectations.relation` subject/reference must match `expectations.objects` in order".into()
                    );
                }
            }
            (None, false) => {}
        }
        Ok(())
    }

    /// Distinct object labels in listed order; these are the detector queries.
    pub fn queries(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.expectations.objects {
            if !out.contains(o) {
                out.push(o.clone());
            }
        }
        out
    }
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn by_confidence(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.label.cmp(&b.label))
        .then_with(|| a.bbox.iter().zip(&b.bbox).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))))
}

/// Greedy per-label suppression: a box is dropped when its IoU with an
/// already kept box of the same label exceeds `iou_threshold`. The output is
/// sorted by descending confidence.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Result<Vec<Detection>> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Invalid(format!("NMS IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by(by_confidence);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if !kept.iter().any(|k| k.label == d.label && iou(&k.bbox, &d.bbox) > iou_threshold) {
            kept.push(d);
        }
    }
    Ok(kept)
}

fn srgb_to_linear(c: u8) -> f64 {
    let v = c as f64 / 255.0;
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB to CIELAB under the D65 white point.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let f = |t: f64| {
        let d: f64 = 6.0 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Nearest named color in CIELAB; ties go to the earlier name.
pub fn nearest_color(rgb: [u8; 3]) -> ColorName {
    let lab = srgb_to_lab(rgb);
    let mut best = (ColorName::Red, f64::INFINITY);
    for c in ColorName::ALL {
        let l = srgb_to_lab(c.srgb());
        let d = (lab[0] - l[0]).powi(2) + (lab[1] - l[1]).powi(2) + (lab[2] - l[2]).powi(2);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Pixel rectangle `(x0, y0, x1, y1)` covered by a normalized box.
pub fn pixel_box(bbox: &[f64; 4], width: u32, height: u32) -> (u32, u32, u32, u32) {
    let px = |v: f64, n: u32| ((v.clamp(0.0, 1.0) * n as f64).round() as u32).min(n);
    (px(bbox[0], width), px(bbox[1], height), px(bbox[2], width), px(bbox[3], height))
}

/// Majority color of the crop under `bbox`; ties go to the earlier name.
pub fn classify_color_rgb(img: &RgbImage, bbox: &[f64; 4]) -> Result<ColorName> {
    let (x0, y0, x1, y1) = pixel_box(bbox, img.width(), img.height());
    let area = x1.saturating_sub(x0) as u64 * y1.saturating_sub(y0) as u64;
    if area < 4 {
        return Err(Error::DegenerateBox(area));
    }
    let mut cache: HashMap<[u8; 3], ColorName> = HashMap::new();
    let mut votes = [0u64; 11];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = img.get_pixel(x, y).0;
            let c = *cache.entry(p).or_insert_with(|| nearest_color(p));
            votes[c as usize] += 1;
        }
    }
    let mut best = 0;
    for i in 1..votes.len() {
        if votes[i] > votes[best] {
            best = i;
        }
    }
    Ok(ColorName::ALL[best])
}

pub fn classify_color(image: &[u8], bbox: &[f64; 4]) -> Result<ColorName> {
    classify_color_rgb(&decode(image)?.to_rgb8(), bbox)
}

/// Dominant-axis comparison of box centroids; y grows downwards.
pub fn relation(subject: &[f64; 4], reference: &[f64; 4]) -> Relation {
    let centroid = |b: &[f64; 4]| ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
    let (sx, sy) = centroid(subject);
    let (rx, ry) = centroid(reference);
    let (dx, dy) = (sx - rx, sy - ry);
    if dx == 0.0 && dy == 0.0 {
        Relation::None
    } else if dx.abs() >= dy.abs() {
        if dx < 0.0 {
            Relation::LeftOf
        } else {
            Relation::RightOf
        }
    } else if dy < 0.0 {
        Relation::Above
    } else {
        Relation::Below
    }
}

/// Applies the task rule to raw detector output for one image.
pub fn score_detections(prompt: &GenEvalPrompt, img: &RgbImage, dets: &[Detection], tau: f64, nms_iou: f64) -> Result<bool> {
    let above: Vec<Detection> = dets.iter().filter(|d| d.confidence >= tau).cloned().collect();
    let kept = nms(&above, nms_iou)?;
    let top = |label: &str| kept.iter().find(|d| d.label == label);
    let count = |label: &str| kept.iter().filter(|d| d.label == label).count();
    let color_ok = |label: &str, want: ColorName| match top(label) {
        Some(d) => matches!(classify_color_rgb(img, &d.bbox), Ok(c) if c == want),
        None => false,
    };
    let e = &prompt.expectations;
    Ok(match prompt.task {
        Task::SingleObject => count(&e.objects[0]) >= 1,
        Task::TwoObject => e.objects.iter().all(|o| count(o) >= 1),
        Task::Counting => e.count.is_some_and(|n| count(&e.objects[0]) == n as usize),
        Task::Colors | Task::ColorAttribute => {
            !e.colors.is_empty() && e.colors.iter().all(|c| color_ok(&c.object, c.color))
        }
        Task::Position => match &e.relation {
            Some(r) => match (top(&r.subject), top(&r.reference)) {
                (Some(s), Some(t)) => relation(&s.bbox, &t.bbox) == r.kind,
                _ => false,
            },
            None => false,
        },
    })
}

/// Scores one image: detection, thresholding at `tau`, NMS, then the task rule.
pub fn score_prompt(prompt: &GenEvalPrompt, image: &[u8], detector: &dyn Detector, tau: f64, nms_iou: f64) -> Result<bool> {
    let img = decode(image)?.to_rgb8();
    let dets = detector.detect(image, &prompt.queries())?;
    score_detections(prompt, &img, &dets, tau, nms_iou)
}

/// Per-task accuracies (in `Task::ALL` order) and their unweighted mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationScore {
    pub tasks: [f64; 6],
    pub overall: f64,
}

pub fn generation_score(results: &[(Task, bool)]) -> Result<GenerationScore> {
    let mut hits = [0u64; 6];
    let mut totals = [0u64; 6];
    for (task, ok) in results {
        totals[task.index()] += 1;
        hits[task.index()] += *ok as u64;
    }
    let mut tasks = [0.0; 6];
    for (i, t) in Task::ALL.iter().enumerate() {
        if totals[i] == 0 {
            return Err(Error::MissingTask(t.as_str().into()));
        }
        tasks[i] = hits[i] as f64 / totals[i] as f64;
    }
    Ok(GenerationScore { tasks, overall: tasks.iter().sum::<f64>() / 6.0 })
}

pub fn mgg(overalls: &[f64]) -> Result<f64> {
    if overalls.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(overalls.iter().sum::<f64>() / overalls.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MggRow {
    pub k: u32,
    pub score: GenerationScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MggReport {
    pub rows: Vec<MggRow>,
    pub mgg: f64,
}

impl MggReport {
    pub fn from_rows(rows: Vec<MggRow>) -> Result<Self> {
        let overalls: Vec<f64> = rows.iter().map(|r| r.score.overall).collect();
        let mgg = mgg(&overalls)?;
        Ok(MggReport { rows, mgg })
    }

    /// Overall score of the first generated image.
    pub fn first(&self) -> f64 {
        self.rows[0].score.overall
    }
}

pub const MGG_CSV_HEADER: &str = "k,single_object,two_object,counting,colors,position,color_attr,overall";

pub fn mgg_csv(report: &MggReport) -> String {
    let mut out = format!("{MGG_CSV_HEADER}\n");
    for r in &report.rows {
        let cells: Vec<String> = r.score.tasks.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&format!("{},{},{}\n", r.k, cells.join(","), fmt_f64(r.score.overall)));
    }
    out
}

pub fn write_mgg_files(dir: &Path, report: &MggReport) -> Result<()> {
    write_atomic(&dir.join("mgg.csv"), mgg_csv(report).as_bytes())?;
    write_atomic(&dir.join("mgg.txt"), format!("mgg={}\n", fmt_f64(report.mgg)).as_bytes())
}

/// Reads `mgg.csv` back; the scalar is recomputed from the rows.
pub fn read_mgg_csv(path: &Path) -> Result<MggReport> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingMetrics(path.to_owned())),
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |line: usize, message: String| Error::Parse { path: path.display().to_string(), line, message };
    let mut lines = text.lines();
    if lines.next() != Some(MGG_CSV_HEADER) {
        return Err(bad(1, format!("expected header `{MGG_CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 8 {
            return Err(bad(i + 2, format!("expected 8 columns, got {}", cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 2, format!("`{s}`: {e}")));
        let k = cells[0].parse::<u32>().map_err(|e| bad(i + 2, format!("k `{}`: {e}", cells[0])))?;
        let mut tasks = [0.0; 6];
        for (j, t) in tasks.iter_mut().enumerate() {
            *t = num(cells[j + 1])?;
        }
        rows.push(MggRow { k, score: GenerationScore { tasks, overall: num(cells[7])? } });
    }
    MggReport::from_rows(rows)
}

/// Scores every image of Text-First chains whose ids are the sanitized
/// prompt ids. Image k of every chain forms generation k; all chains must
/// carry the same number of images.
#[allow(clippy::too_many_arguments)]
pub fn score_run(
    store: &RunStore,
    chains: &[ChainRecord],
    prompts: &[GenEvalPrompt],
    detector: &dyn Detector,
    tau: f64,
    nms_iou: f64,
    exec: Execution,
) -> Result<MggReport> {
    let by_id: HashMap<String, &GenEvalPrompt> = prompts.iter().map(|p| (sanitize_id(&p.prompt_id), p)).collect();
    let mut jobs: Vec<(u32, &GenEvalPrompt, &ChainRecord, usize)> = Vec::new();
    let mut images_per_chain: Option<usize> = None;
    for chain in chains {
        if chain.spec.start != StartModality::TextFirst {
            return Err(Error::Config(format!("chain `{}` is not text-first", chain.spec.chain_id)));
        }
        let prompt = by_id
            .get(&chain.spec.chain_id)
            .ok_or_else(|| Error::Config(format!("chain `{}` has no matching prompt", chain.spec.chain_id)))?;
        let images: Vec<usize> =
            chain.artifacts.iter().enumerate().filter(|(_, a)| a.modality == Modality::Image).map(|(i, _)| i).collect();
        let expected = chain.spec.generations.div_ceil(2) as usize;
        if images.len() < expected {
            return Err(Error::IncompleteChain { chain_id: chain.spec.chain_id.clone(), k: images.len() + 1 });
        }
        match images_per_chain {
            None => images_per_chain = Some(images.len()),
            Some(n) if n != images.len() => {
                return Err(Error::Config("chains in one MGG run must have the same number of images".into()))
            }
            _ => {}
        }
        for (k, idx) in images.into_iter().enumerate() {
            jobs.push((k as u32 + 1, prompt, chain, idx));
        }
    }
    let scored = exec.map(&jobs, |(k, prompt, chain, idx)| -> Result<(u32, Task, bool)> {
        let bytes = store.read_artifact(&chain.spec.chain_id, &chain.artifacts[*idx])?;
        Ok((*k, prompt.task, score_prompt(prompt, &bytes, detector, tau, nms_iou)?))
    });
    let k_max = images_per_chain.unwrap_or(0) as u32;
    let mut per_k: Vec<Vec<(Task, bool)>> = vec![Vec::new(); k_max as usize];
    for r in scored {
        let (k, task, ok) = r?;
        per_k[k as usize - 1].push((task, ok));
    }
    let rows = per_k
        .iter()
        .enumerate()
        .map(|(i, results)| Ok(MggRow { k: i as u32 + 1, score: generation_score(results)? }))
        .collect::<Result<Vec<_>>>()?;
    MggReport::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn det(bbox: [f64; 4], label: &str, confidence: f64) -> Detection {
        Detection::new(bbox, label, confidence).unwrap()
    }

    fn prompt(task: Task, expectations: Expectations) -> GenEvalPrompt {
        GenEvalPrompt { prompt_id: "p".into(), task, text: "t".into(), expectations }
    }

    fn objects(labels: &[&str]) -> Expectations {
        Expectations { objects: labels.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    fn canvas(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([255, 255, 255]))
    }

    #[test]
    fn nms_keeps_the_stronger_overlapping_box() {
        // Boxes of area 1.0 and 0.9 nested: IoU 0.9.
        let a = det([0.0, 0.0, 1.0, 1.0], "dog", 0.8);
        let b = det([0.0, 0.0, 1.0, 0.9], "dog", 0.6);
        assert!((iou(&a.bbox, &b.bbox) - 0.9).abs() < 1e-12);
        assert_eq!(nms(&[b, a.clone()], 0.5).unwrap(), vec![a]);
    }

    #[test]
    fn nms_leaves_disjoint_boxes_and_other_labels() {
        let a = det([0.0, 0.0, 0.4, 0.4], "dog", 0.5);
        let b = det([0.6, 0.6, 1.0, 1.0], "dog", 0.9);
        let c = det([0.0, 0.0, 0.4, 0.4], "cat", 0.7);
        assert_eq!(nms(&[a.clone(), b.clone(), c.clone()], 0.5).unwrap(), vec![b, c, a]);
        assert!(nms(&[], 0.0).is_err());
    }

    #[test]
    fn pure_colors_classify() {
        let mut img = canvas(10, 10);
        for p in img.pixels_mut() {
            *p = Rgb([255, 0, 0]);
        }
        assert_eq!(classify_color_rgb(&img, &[0.0, 0.0, 1.0, 1.0]).unwrap(), ColorName::Red);
        for p in img.pixels_mut() {
            *p = Rgb([0, 0, 255]);
        }
        assert_eq!(classify_color_rgb(&img, &[0.0, 0.0, 1.0, 1.0]).unwrap(), ColorName::Blue);
        for c in ColorName::ALL {
            assert_eq!(nearest_color(c.srgb()), c);
        }
    }

    #[test]
    fn majority_wins() {
        let mut img = canvas(10, 10);
        for (x, _, p) in img.enumerate_pixels_mut() {
            *p = if x < 6 { Rgb([0, 128, 0]) } else { Rgb([0, 0, 0]) };
        }
        assert_eq!(classify_color_rgb(&img, &[0.0, 0.0, 1.0, 1.0]).unwrap(), ColorName::Green);
    }

    #[test]
    fn tiny_boxes_are_rejected() {
        let img = canvas(10, 10);
        assert!(matches!(classify_color_rgb(&img, &[0.0, 0.0, 0.1, 0.3]), Err(Error::DegenerateBox(3))));
    }

    #[test]
    fn relations() {
        let at = |x: f64, y: f64| [x - 0.05, y - 0.05, x + 0.05, y + 0.05];
        assert_eq!(relation(&at(0.2, 0.5), &at(0.8, 0.5)), Relation::LeftOf);
        assert_eq!(relation(&at(0.8, 0.5), &at(0.2, 0.5)), Relation::RightOf);
        assert_eq!(relation(&at(0.5, 0.5), &at(0.5, 0.5)), Relation::None);
        assert_eq!(relation(&at(0.5, 0.3), &at(0.4, 0.7)), Relation::Above);
        assert_eq!(relation(&at(0.4, 0.7), &at(0.5, 0.3)), Relation::Below);
    }

    #[test]
    fn counting_uses_surviving_boxes() {
        let p = prompt(Task::Counting, Expectations { count: Some(3), ..objects(&["dog"]) });
        let img = canvas(4, 4);
        let three = [
            det([0.0, 0.0, 0.2, 0.2], "dog", 0.9),
            det([0.4, 0.0, 0.6, 0.2], "dog", 0.8),
            det([0.8, 0.0, 1.0, 0.2], "dog", 0.7),
        ];
        assert!(score_detections(&p, &img, &three, 0.3, 0.5).unwrap());
        let mut four = three.to_vec();
        four.push(det([0.0, 0.5, 0.2, 0.7], "dog", 0.6));
        assert!(!score_detections(&p, &img, &four, 0.3, 0.5).unwrap());
        let mut dup = three.to_vec();
        dup.push(det([0.0, 0.0, 0.2, 0.18], "dog", 0.6));
        assert!(score_detections(&p, &img, &dup, 0.3, 0.5).unwrap());
    }

    #[test]
    fn generation_score_averages_tasks() {
        let mut results = Vec::new();
        let per_task = [(1, 1), (2, 2), (1, 2), (0, 1), (3, 4), (1, 4)];
        for (t, (hits, n)) in Task::ALL.iter().zip(per_task) {
            for i in 0..n {
                results.push((*t, i < hits));
            }
        }
        let s = generation_score(&results).unwrap();
        assert_eq!(s.tasks, [1.0, 1.0, 0.5, 0.0, 0.75, 0.25]);
        assert!((s.overall - 3.5 / 6.0).abs() < 1e-15);
        results.retain(|(t, _)| *t != Task::Position);
        assert!(matches!(generation_score(&results), Err(Error::MissingTask(t)) if t == "position"));
    }

    #[test]
    fn mgg_is_the_mean() {
        assert!((mgg(&[0.8, 0.6]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(mgg(&[1.0; 20]).unwrap(), 1.0);
        assert!(matches!(mgg(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn validation_names_the_field() {
        let err = prompt(Task::Counting, objects(&["dog"])).validate().unwrap_err();
        assert!(err.contains("expectations.count"), "{err}");
        let ok = prompt(
            Task::ColorAttribute,
            Expectations {
                colors: vec![
                    ColorBinding { object: "cup".into(), color: ColorName::Red },
                    ColorBinding { object: "bowl".into(), color: ColorName::Blue },
                ],
                ..objects(&["cup", "bowl"])
            },
        );
        assert!(ok.validate().is_ok());
        let err = prompt(Task::SingleObject, Expectations { count: Some(1), ..objects(&["dog"]) }).validate().unwrap_err();
        assert!(err.contains("expectations.count"), "{err}");
    }

    #[test]
    fn mgg_csv_round_trips() {
        let rows = vec![
            MggRow { k: 1, score: GenerationScore { tasks: [1.0, 1.0, 0.5, 0.0, 0.75, 0.25], overall: 3.5 / 6.0 } },
            MggRow { k: 2, score: GenerationScore { tasks: [0.1; 6], overall: 0.1 } },
        ];
        let report = MggReport::from_rows(rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_mgg_files(dir.path(), &report).unwrap();
        assert_eq!(read_mgg_csv(&dir.path().join("mgg.csv")).unwrap(), report);
        let txt = std::fs::read_to_string(dir.path().join("mgg.txt")).unwrap();
        assert!(txt.starts_with("mgg=0.34"));
    }

    fn arb_det() -> impl Strategy<Value = Detection> {
        (0.0f64..0.8, 0.0f64..0.8, 0.05f64..0.2, 0.05f64..0.2, 0usize..3, 0.0f64..1.0).prop_map(|(x, y, w, h, l, c)| {
            det([x, y, x + w, y + h], ["dog", "cat", "cup"][l], c)
        })
    }

    proptest! {
        #[test]
        fn nms_is_idempotent(dets in proptest::collection::vec(arb_det(), 0..25), thr in 0.05f64..1.0) {
            let once = nms(&dets, thr).unwrap();
            prop_assert_eq!(nms(&once, thr).unwrap(), once.clone());
            for label in ["dog", "cat", "cup"] {
                let own: Vec<Detection> = dets.iter().filter(|d| d.label == label).cloned().collect();
                let alone = nms(&own, thr).unwrap();
                let within: Vec<Detection> = once.iter().filter(|d| d.label == label).cloned().collect();
                prop_assert_eq!(alone, within);
            }
        }

        #[test]
        fn raising_tau_never_helps_presence(dets in proptest::collection::vec(arb_det(), 0..20), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let img = canvas(8, 8);
            for p in [prompt(Task::SingleObject, objects(&["dog"])), prompt(Task::TwoObject, objects(&["dog", "cat"]))] {
                let a = score_detections(&p, &img, &dets, lo, 0.5).unwrap();
                let b = score_detections(&p, &img, &dets, hi, 0.5).unwrap();
                prop_assert!(a || !b);
            }
        }

        #[test]
        fn scores_ignore_result_order(mut results in proptest::collection::vec((0usize..6, any::<bool>()), 6..60)) {
            for (i, t) in Task::ALL.iter().enumerate() {
                results.push((i, t.index() % 2 == 0));
            }
            let tagged: Vec<(Task, bool)> = results.iter().map(|(i, ok)| (Task::ALL[*i], *ok)).collect();
            let mut rev = tagged.clone();
            rev.reverse();
            let a = generation_score(&tagged).unwrap();
            prop_assert_eq!(a, generation_score(&rev).unwrap());
            prop_assert!(a.tasks.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
