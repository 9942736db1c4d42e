//! Minimal deterministic SVG charts. All coordinates are printed with two
//! decimals, so identical inputs give identical bytes.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// Ten bins over [0, 1], light to dark.
pub const HEAT_BINS: [&str; 10] =
    ["#f7fbff", "#deebf7", "#c6dbef", "#9ecae1", "#6baed6", "#4292c6", "#2171b5", "#08519c", "#08306b", "#041b3d"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn heat_bin(v: f64) -> usize {
    if v.is_nan() || v <= 0.0 {
        0
    } else {
        ((v * 10.0).floor() as usize).min(9)
    }
}

pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub markers: bool,
    pub color: usize,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let fold = |it: &mut dyn Iterator<Item = f64>| {
            it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (mut x0, mut x1) = fold(&mut xs.clone());
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        let (ylo, yhi) = fold(&mut ys.clone());
        let y0 = if ylo.is_finite() { (ylo.min(0.0) * 10.0).floor() / 10.0 } else { 0.0 };
        let y1 = if yhi.is_finite() { (yhi.max(1.0) * 10.0).ceil() / 10.0 } else { 1.0 };
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(out, "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>", width / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, integer_x: bool) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, "<path d=\"M{l:.2} {t:.2} V{b:.2} H{r:.2}\" fill=\"none\" stroke=\"black\"/>");
    for i in 0..=5 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 5.0;
        let py = f.py(y);
        let _ = writeln!(out, "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{l:.2}\" y2=\"{py:.2}\" stroke=\"black\"/>", l - 4.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{y:.2}</text>", l - 7.0, py + 4.0);
    }
    let ticks: Vec<f64> = if integer_x && f.x1 - f.x0 <= 25.0 {
        let step = if f.x1 - f.x0 > 12.0 { 2.0 } else { 1.0 };
        let mut v = Vec::new();
        let mut x = f.x0.ceil();
        while x <= f.x1 + 1e-9 {
            v.push(x);
            x += step;
        }
        v
    } else {
        (0..=5).map(|i| f.x0 + (f.x1 - f.x0) * i as f64 / 5.0).collect()
    };
    for x in ticks {
        let px = f.px(x);
        let _ = writeln!(out, "<line x1=\"{px:.2}\" y1=\"{b:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", b + 4.0);
        let label = if integer_x { format!("{x:.0}") } else { format!("{x:.2}") };
        let _ = writeln!(out, "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{label}</text>", b + 17.0);
    }
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", (l + r) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{0:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0:.2})\">{1}</text>",
        (t + b) / 2.0,
        escape(y_label)
    );
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, lines: &[Line]) -> String {
    let f = Frame::new(
        lines.iter().flat_map(|l| l.points.iter().map(|p| p.0)),
        lines.iter().flat_map(|l| l.points.iter().map(|p| p.1)),
    );
    let mut out = String::new();
    open(&mut out, W, H, title);
    axes(&mut out, &f, x_label, y_label, true);
    for (i, line) in lines.iter().enumerate() {
        let color = PALETTE[line.color % PALETTE.len()];
        let d: Vec<String> = line
            .points
            .iter()
            .enumerate()
            .map(|(j, (x, y))| format!("{}{:.2} {:.2}", if j == 0 { "M" } else { "L" }, f.px(*x), f.py(*y)))
            .collect();
        let dash = if line.dashed { " stroke-dasharray=\"5 3\"" } else { "" };
        let _ = writeln!(out, "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>", d.join(" "));
        if line.markers {
            for (x, y) in &line.points {
                let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{color}\"/>", f.px(*x), f.py(*y));
            }
        }
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(out, "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>", lx + 20.0);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", lx + 26.0, ly + 4.0, escape(&line.label));
    }
    out.push_str("</svg>\n");
    out
}

pub struct Point {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[Point]) -> String {
    let f = Frame::new(points.iter().map(|p| p.x).chain([0.0, 1.0]), points.iter().map(|p| p.y));
    let mut out = String::new();
    open(&mut out, W, H, title);
    axes(&mut out, &f, x_label, y_label, false);
    for (i, p) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let (px, py) = (f.px(p.x), f.py(p.y));
        let _ = writeln!(out, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"5\" fill=\"{color}\"/>");
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", px + 8.0, py - 6.0, escape(&p.label));
    }
    out.push_str("</svg>\n");
    out
}

/// One heatmap block per entry: rows are labelled, columns are indices
/// `1..=n`. Values are binned into `HEAT_BINS`.
pub struct HeatBlock {
    pub title: String,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn heatmap(title: &str, blocks: &[HeatBlock]) -> String {
    let cell = 30.0;
    let label_w = 110.0;
    let cols = blocks.iter().flat_map(|b| b.rows.iter().map(|r| r.1.len())).max().unwrap_or(0);
    let block_h = |b: &HeatBlock| 26.0 + cell * b.rows.len() as f64 + 24.0;
    let width = (label_w + cell * cols as f64 + 30.0).max(320.0);
    let height = 40.0 + blocks.iter().map(block_h).sum::<f64>() + 40.0;
    let mut out = String::new();
    open(&mut out, width, height, title);
    let mut y = 40.0;
    for b in blocks {
        let _ = writeln!(out, "<text x=\"{label_w:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>", y + 14.0, escape(&b.title));
        y += 26.0;
        for (r, (label, values)) in b.rows.iter().enumerate() {
            let ry = y + cell * r as f64;
            let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", label_w - 6.0, ry + cell / 2.0 + 4.0, escape(label));
            for (c, v) in values.iter().enumerate() {
                let bin = heat_bin(*v);
                let cx = label_w + cell * c as f64;
                let _ = writeln!(
                    out,
                    "<rect x=\"{cx:.2}\" y=\"{ry:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\" stroke=\"white\"/>",
                    HEAT_BINS[bin]
                );
                let ink = if bin >= 5 { "white" } else { "black" };
                let _ = writeln!(
                    out,
                    "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"9\" fill=\"{ink}\">{v:.2}</text>",
                    cx + cell / 2.0,
                    ry + cell / 2.0 + 3.0
                );
            }
        }
        y += cell * b.rows.len() as f64;
        for c in 0..cols {
            let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>", label_w + cell * (c as f64 + 0.5), y + 14.0, c + 1);
        }
        y += 24.0;
    }
    for (i, color) in HEAT_BINS.iter().enumerate() {
        let x = label_w + 18.0 * i as f64;
        let _ = writeln!(out, "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"18\" height=\"10\" fill=\"{color}\" stroke=\"#999999\"/>", y + 6.0);
    }
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">0</text>", label_w - 10.0, y + 15.0);
    let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">1</text>", label_w + 184.0, y + 15.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_the_unit_interval() {
        assert_eq!(heat_bin(0.0), 0);
        assert_eq!(heat_bin(0.099), 0);
        assert_eq!(heat_bin(0.1), 1);
        assert_eq!(heat_bin(0.95), 9);
        assert_eq!(heat_bin(1.0), 9);
        assert_eq!(heat_bin(f64::NAN), 0);
    }

    #[test]
    fn charts_are_deterministic_and_escaped() {
        let lines = vec![Line { label: "a<b".into(), points: vec![(1.0, 0.9), (2.0, 0.8)], dashed: false, markers: true, color: 0 }];
        let a = line_chart("t & t", "k", "S", &lines);
        assert_eq!(a, line_chart("t & t", "k", "S", &lines));
        assert!(a.contains("a&lt;b") && a.contains("t &amp; t"));
        assert!(a.ends_with("</svg>\n"));
    }
}
