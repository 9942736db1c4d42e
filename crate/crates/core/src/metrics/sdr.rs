//! Power-law decay fitting, `y = alpha * x^(-beta) + gamma`, under the box
//! `alpha >= 0`, `beta >= 0`, `0 <= gamma <= 1`.
//!
//! For a fixed `beta` the model is linear in `(alpha, gamma)`, so the fit
//! profiles `beta`: a coarse grid over `[0, 3]` at step 0.01, each point
//! solved exactly for `(alpha, gamma)` on the constraint box, followed by a
//! golden-section refinement of `beta` inside the bracket around the best
//! grid point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::embed::SimilaritySeries;
use crate::error::{Error, Result};
use crate::par::Execution;

pub const BETA_MAX: f64 = 3.0;
pub const GRID_STEPS: usize = 300;
pub const REFINE_WIDTH: f64 = 1e-6;
/// Tolerance under which the flat (`beta = 0`) solution is preferred.
pub const FLAT_TIE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rss: f64,
}

impl PowerLawParams {
    pub fn value_at(&self, x: f64) -> f64 {
        self.alpha * x.powf(-self.beta) + self.gamma
    }
}

pub fn eval_curve(p: &PowerLawParams, k: f64) -> Result<f64> {
    if k.is_nan() || k < 1.0 {
        return Err(Error::Domain(k));
    }
    Ok(p.value_at(k))
}

/// Which index a series is fitted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitDomain {
    /// Occurrence index k = 1, 2, ...
    #[default]
    K,
    /// Raw generation index g.
    G,
}

pub fn series_points(series: &SimilaritySeries, domain: FitDomain) -> Vec<(f64, f64)> {
    series
        .points
        .iter()
        .map(|p| {
            let x = match domain {
                FitDomain::K => p.k as f64,
                FitDomain::G => p.g as f64,
            };
            (x, p.s)
        })
        .collect()
}

pub fn fit_power_law(series: &SimilaritySeries, domain: FitDomain) -> Result<PowerLawParams> {
    fit_points(&series_points(series, domain))
}

/// Best `(alpha, gamma)` for a fixed `beta` on the constraint box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolution {
    pub alpha: f64,
    pub gamma: f64,
    pub rss: f64,
}

fn rss_of(points: &[(f64, f64)], beta: f64, alpha: f64, gamma: f64) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let r = alpha * x.powf(-beta) + gamma - y;
            r * r
        })
        .sum()
}

/// Solves the 2-variable least squares for `(alpha, gamma)` at fixed
/// `beta`. The problem is a convex quadratic on a box, so the optimum is
/// among the KKT candidates: the interior stationary point, the optimum on
/// each active face, and the corners.
pub fn solve_linear(points: &[(f64, f64)], beta: f64) -> LinearSolution {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let u = x.powf(-beta);
        sx += u;
        sy += y;
        sxx += u * u;
        sxy += u * y;
    }
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(6);
    let det = n * sxx - sx * sx;
    if det > 1e-14 * n * sxx {
        let alpha = (n * sxy - sx * sy) / det;
        let gamma = (sy - alpha * sx) / n;
        candidates.push((alpha, gamma));
    }
    candidates.push((0.0, (sy / n).clamp(0.0, 1.0)));
    for gamma in [0.0, 1.0] {
        let alpha = if sxx > 0.0 { ((sxy - gamma * sx) / sxx).max(0.0) } else { 0.0 };
        candidates.push((alpha, gamma));
    }
    let mut best: Option<LinearSolution> = None;
    for (alpha, gamma) in candidates {
        if !(alpha >= 0.0 && (0.0..=1.0).contains(&gamma)) {
            continue;
        }
        let rss = rss_of(points, beta, alpha, gamma);
        if best.is_none_or(|b| rss < b.rss) {
            best = Some(LinearSolution { alpha, gamma, rss });
        }
    }
    best.expect("the alpha = 0 face always yields a feasible candidate")
}

fn grid_beta(i: usize) -> f64 {
    i as f64 * (BETA_MAX / GRID_STEPS as f64)
}

/// Fits `(x, y)` points. See the module docs for the procedure.
pub fn fit_points(points: &[(f64, f64)]) -> Result<PowerLawParams> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if let Some(&(x, _)) = points.iter().find(|(x, y)| x.is_nan() || *x < 1.0 || !y.is_finite()) {
        return Err(Error::Domain(x));
    }
    // Sorting makes every sum order-independent.
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let eval = |beta: f64| -> (f64, LinearSolution) { (beta, solve_linear(&pts, beta)) };
    let grid: Vec<(f64, LinearSolution)> = (0..=GRID_STEPS).map(|i| eval(grid_beta(i))).collect();
    let (best_i, _) = grid
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, br), (i, (_, s))| if s.rss < br { (i, s.rss) } else { (bi, br) });
    let mut best = grid[best_i];

    let mut lo = grid_beta(best_i.saturating_sub(1));
    let mut hi = grid_beta((best_i + 1).min(GRID_STEPS));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while hi - lo > REFINE_WIDTH {
        if fc.1.rss < fd.1.rss {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = eval(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = eval(d);
        }
        for cand in [fc, fd] {
            if cand.1.rss < best.1.rss {
                best = cand;
            }
        }
    }
    let mid = eval((lo + hi) / 2.0);
    if mid.1.rss < best.1.rss {
        best = mid;
    }

    let flat = grid[0].1;
    if flat.rss - best.1.rss <= FLAT_TIE {
        return Ok(PowerLawParams { alpha: 0.0, beta: 0.0, gamma: flat.alpha + flat.gamma, rss: flat.rss });
    }
    let (beta, sol) = best;
    Ok(PowerLawParams { alpha: sol.alpha, beta, gamma: sol.gamma, rss: sol.rss })
}

/// Component-wise mean of fitted parameters; `rss` is the mean rss.
pub fn average_params(params: &[PowerLawParams]) -> Result<PowerLawParams> {
    if params.is_empty() {
        return Err(Error::EmptyList);
    }
    let n = params.len() as f64;
    let mean = |f: fn(&PowerLawParams) -> f64| params.iter().map(f).sum::<f64>() / n;
    Ok(PowerLawParams {
        alpha: mean(|p| p.alpha),
        beta: mean(|p| p.beta),
        gamma: mean(|p| p.gamma),
        rss: mean(|p| p.rss),
    })
}

/// Contents of `sdr.json`: one fit per mapping plus the per-setting
/// parameter averages (keyed by start modality).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdrReport {
    pub fit_domain: FitDomain,
    pub mappings: BTreeMap<String, PowerLawParams>,
    pub settings: BTreeMap<String, PowerLawParams>,
}

impl SdrReport {
    pub fn fit(series: &[SimilaritySeries], domain: FitDomain, exec: Execution) -> Result<Self> {
        let fits = exec.map(series, |s| fit_power_law(s, domain)).into_iter().collect::<Result<Vec<_>>>()?;
        let mut grouped: BTreeMap<String, Vec<PowerLawParams>> = BTreeMap::new();
        let mut mappings = BTreeMap::new();
        for (s, p) in series.iter().zip(fits) {
            grouped.entry(s.mapping.direction.start().to_string()).or_default().push(p);
            if mappings.insert(s.mapping.to_string(), p).is_some() {
                return Err(Error::DuplicateMapping(s.mapping.to_string()));
            }
        }
        let settings = grouped
            .into_iter()
            .map(|(k, v)| Ok((k, average_params(&v)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(SdrReport { fit_domain: domain, mappings, settings })
    }
}
