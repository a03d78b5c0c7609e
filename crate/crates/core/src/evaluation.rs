//! Boundary-matching evaluation: precision/recall curves, ODS, OIS and AP.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{thin, Raster};
use crate::scalar::Scalar;

/// Default matching radius as a fraction of the image diagonal.
pub const DEFAULT_TOLERANCE: f64 = 0.0075;
pub const DEFAULT_THRESHOLDS: usize = 99;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_thresholds: usize,
    /// Matching radius as a fraction of the image diagonal.
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_thresholds: DEFAULT_THRESHOLDS,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Counts at one threshold, with the derived rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

impl PrPoint {
    pub fn from_counts(threshold: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        PrPoint {
            threshold,
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
        }
    }
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ods: f64,
    pub ois: f64,
    pub ap: f64,
    /// Dataset-aggregated counts per threshold, thresholds ascending.
    pub per_threshold: Vec<PrPoint>,
    /// `(image index, best F over thresholds)` in input order.
    pub per_image_best: Vec<(usize, f64)>,
}

impl EvalReport {
    /// Threshold of the ODS operating point.
    pub fn ods_threshold(&self) -> f64 {
        best_point(&self.per_threshold).map_or(0.0, |p| p.threshold)
    }

    pub fn write_report(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = format!(
            "ods = {:.6}\nois = {:.6}\nap = {:.6}\nods_threshold = {:.6}\nimages = {}\n",
            self.ods,
            self.ois,
            self.ap,
            self.ods_threshold(),
            self.per_image_best.len()
        );
        write(path.as_ref(), &text)
    }

    pub fn write_pr_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("threshold\tprecision\trecall\tf_measure\n");
        for p in &self.per_threshold {
            let _ = writeln!(text, "{:.6}\t{:.6}\t{:.6}\t{:.6}", p.threshold, p.precision, p.recall, p.f_measure);
        }
        write(path.as_ref(), &text)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn best_point(points: &[PrPoint]) -> Option<&PrPoint> {
    // first maximum wins so ties resolve to the lowest threshold
    points.iter().fold(None, |best: Option<&PrPoint>, p| match best {
        Some(b) if b.f_measure >= p.f_measure => Some(b),
        _ => Some(p),
    })
}

fn on_pixels<T: Scalar>(map: &Raster<T>) -> Vec<usize> {
    let half = T::lit(0.5);
    map.pixels().iter().enumerate().filter(|(_, v)| **v >= half).map(|(i, _)| i).collect()
}

/// One-to-one matching of binary maps.
///
/// Every (pred, gt) pair closer than `max_dist * diagonal` is a candidate.
/// Candidates are first taken greedily in order of increasing distance (ties
/// by raster index of the prediction, then of the ground truth); augmenting
/// paths then extend that matching to maximum cardinality, so `tp` is the
/// largest achievable number of one-to-one matches. Returns `(tp, fp, fn)`.
pub fn match_boundaries<T: Scalar>(pred: &Raster<T>, gt: &Raster<T>, max_dist: f64) -> Result<(usize, usize, usize)> {
    pred.check_same_dims(gt, "match_boundaries")?;
    if !(max_dist > 0.0) {
        return Err(Error::invalid(format!("match_boundaries: max_dist must be positive, got {max_dist}")));
    }
    let (h, w) = pred.dims();
    let radius = max_dist * ((h * h + w * w) as f64).sqrt();
    let reach = radius.floor() as isize;
    let r2 = radius * radius;
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = dy * dy + dx * dx;
            if d2 as f64 <= r2 {
                offsets.push((dy, dx, d2 as usize));
            }
        }
    }
    offsets.sort_by_key(|&(dy, dx, d2)| (d2, dy, dx));
    let preds = on_pixels(pred);
    let gts = on_pixels(gt);
    let mut gt_id = vec![usize::MAX; h * w];
    for (j, &g) in gts.iter().enumerate() {
        gt_id[g] = j;
    }
    // candidate lists, nearest first
    let mut adj: Vec<Vec<usize>> = Vec::with_capacity(preds.len());
    let mut pairs = Vec::new();
    for (i, &p) in preds.iter().enumerate() {
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        let mut near = Vec::new();
        for &(dy, dx, d2) in &offsets {
            let (yy, xx) = (y + dy, x + dx);
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                continue;
            }
            let j = gt_id[yy as usize * w + xx as usize];
            if j != usize::MAX {
                near.push(j);
                pairs.push((d2, p, gts[j], i, j));
            }
        }
        adj.push(near);
    }
    pairs.sort_unstable();
    let mut pred_match = vec![usize::MAX; preds.len()];
    let mut gt_match = vec![usize::MAX; gts.len()];
    for &(_, _, _, i, j) in &pairs {
        if pred_match[i] == usize::MAX && gt_match[j] == usize::MAX {
            pred_match[i] = j;
            gt_match[j] = i;
        }
    }
    let tp = maximise_matching(&adj, &mut pred_match, &mut gt_match);
    Ok((tp, preds.len() - tp, gts.len() - tp))
}

/// Hopcroft-Karp from an initial matching; returns the final matching size.
fn maximise_matching(adj: &[Vec<usize>], pred_match: &mut [usize], gt_match: &mut [usize]) -> usize {
    const FREE: usize = usize::MAX;
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    loop {
        // layer the free prediction pixels and everything reachable by alternating paths
        queue.clear();
        for u in 0..n {
            if pred_match[u] == FREE && !adj[u].is_empty() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &j in &adj[u] {
                let v = gt_match[j];
                if v == FREE {
                    found = true;
                } else if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if !found {
            break;
        }
        // vertex-disjoint shortest augmenting paths, iterative depth-first search
        let mut next = vec![0usize; n];
        for root in 0..n {
            if pred_match[root] != FREE || dist[root] != 0 {
                continue;
            }
            let mut stack = vec![root];
            while let Some(&u) = stack.last() {
                if next[u] == adj[u].len() {
                    dist[u] = usize::MAX;
                    stack.pop();
                    continue;
                }
                let j = adj[u][next[u]];
                next[u] += 1;
                let v = gt_match[j];
                if v == FREE {
                    // flip the path root .. u, j
                    let mut j = j;
                    for &p in stack.iter().rev() {
                        let prev = pred_match[p];
                        pred_match[p] = j;
                        gt_match[j] = p;
                        j = prev;
                    }
                    for &p in &stack {
                        dist[p] = usize::MAX;
                    }
                    break;
                } else if dist[v] == dist[u] + 1 {
                    stack.push(v);
                }
            }
        }
    }
    pred_match.iter().filter(|&&j| j != FREE).count()
}

/// `k / (n + 1)` for `k = 1..=n`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// Binarize at each threshold, thin, and match against `gt`.
pub fn pr_at_thresholds<T: Scalar>(pred: &Raster<T>, gt: &Raster<T>, thresholds: &[f64], max_dist: f64) -> Result<Vec<PrPoint>> {
    pred.check_same_dims(gt, "pr_at_thresholds")?;
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::invalid("pr_at_thresholds: thresholds must be strictly increasing in (0, 1)"));
    }
    let mut out = Vec::with_capacity(thresholds.len());
    let mut previous: Option<(Vec<bool>, (usize, usize, usize))> = None;
    for &t in thresholds {
        let mask: Vec<bool> = pred.pixels().iter().map(|v| v.as_f64() >= t).collect();
        let counts = match &previous {
            Some((m, c)) if *m == mask => *c,
            _ => {
                let binary = Raster::new(
                    pred.height(),
                    pred.width(),
                    mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
                )?;
                let c = match_boundaries(&thin(&binary), gt, max_dist)?;
                previous = Some((mask, c));
                c
            }
        };
        out.push(PrPoint::from_counts(t, counts.0, counts.1, counts.2));
    }
    Ok(out)
}

/// Area under the precision/recall curve.
///
/// Points are sorted by recall; precision at recall `r` is the best precision
/// at any recall `>= r`, the curve is anchored at recall 0 with that envelope,
/// and the area is integrated by trapezoids up to the largest observed recall.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut pr: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut envelope = vec![0.0; pr.len()];
    let mut best = 0.0f64;
    for i in (0..pr.len()).rev() {
        best = best.max(pr[i].1);
        envelope[i] = best;
    }
    let mut area = 0.0;
    let (mut r_prev, mut p_prev) = (0.0, envelope[0]);
    for (i, &(r, _)) in pr.iter().enumerate() {
        area += (r - r_prev) * (envelope[i] + p_prev) / 2.0;
        r_prev = r;
        p_prev = envelope[i];
    }
    area.clamp(0.0, 1.0)
}

/// ODS, OIS and AP of probability maps against binary ground truth.
pub fn evaluate_dataset<T: Scalar>(preds: &[Raster<T>], gts: &[Raster<T>], cfg: &EvalConfig) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "evaluate_dataset: {} predictions but {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    if cfg.n_thresholds < 2 {
        return Err(Error::invalid("evaluate_dataset: need at least 2 thresholds"));
    }
    let thresholds = uniform_thresholds(cfg.n_thresholds);
    let per_image: Vec<Vec<PrPoint>> = preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| pr_at_thresholds(p, g, &thresholds, cfg.tolerance))
        .collect::<Result<_>>()?;
    Ok(aggregate(&thresholds, &per_image))
}

/// Combines per-image curves (all over `thresholds`) into a report.
pub fn aggregate(thresholds: &[f64], per_image: &[Vec<PrPoint>]) -> EvalReport {
    let per_threshold: Vec<PrPoint> = thresholds
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (tp, fp, fn_) = per_image
                .iter()
                .fold((0, 0, 0), |acc, pts| (acc.0 + pts[k].tp, acc.1 + pts[k].fp, acc.2 + pts[k].fn_));
            PrPoint::from_counts(t, tp, fp, fn_)
        })
        .collect();
    let per_image_best: Vec<(usize, f64)> = per_image
        .iter()
        .enumerate()
        .map(|(i, pts)| (i, best_point(pts).map_or(0.0, |p| p.f_measure)))
        .collect();
    let ods = best_point(&per_threshold).map_or(0.0, |p| p.f_measure);
    let mut bests: Vec<f64> = per_image_best.iter().map(|(_, f)| *f).collect();
    bests.sort_by(f64::total_cmp);
    let ois = if bests.is_empty() { 0.0 } else { bests.iter().sum::<f64>() / bests.len() as f64 };
    EvalReport {
        ods,
        ois,
        ap: average_precision(&per_threshold),
        per_threshold,
        per_image_best,
    }
}
