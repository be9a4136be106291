//! Region metrics against ground truth, one-to-one matching of detections
//! to annotated cells, and per-image / batch reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_ellipse_direct, EllipseModel, Point2};
use crate::scalar::Real;

/// Vertex count used when an ellipse is turned into a polygon.
pub const ELLIPSE_POLYGON_VERTICES: usize = 360;

/// Binary membership mask of one region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, mask: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mask = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, mask }
    }

    /// Even-odd fill evaluated at pixel centres.
    pub fn from_polygon<T: Real>(poly: &[Point2<T>], width: usize, height: usize) -> Self {
        let mut m = Self::empty(width, height);
        if poly.len() < 3 {
            return m;
        }
        let pts: Vec<(f64, f64)> = poly.iter().map(|p| (p.x.as_f64(), p.y.as_f64())).collect();
        let y_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y_max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().max(0.0) as usize;
        let mut xs: Vec<f64> = Vec::new();
        for y in y_min..=y_max.min(height.saturating_sub(1)) {
            let yc = y as f64;
            xs.clear();
            for k in 0..pts.len() {
                let (p, q) = (pts[k], pts[(k + 1) % pts.len()]);
                // half-open rule so shared vertices count once
                if (p.1 <= yc) != (q.1 <= yc) {
                    xs.push(p.0 + (yc - p.1) * (q.0 - p.0) / (q.1 - p.1));
                }
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for pair in xs.chunks(2) {
                if pair.len() < 2 {
                    break;
                }
                // columns are half-open as well: [left, right)
                let x0 = pair[0].ceil().max(0.0) as usize;
                let x1 = pair[1].ceil().clamp(0.0, width as f64) as usize;
                for x in x0..x1 {
                    let i = y * width + x;
                    m.mask[i] = !m.mask[i];
                }
            }
        }
        m
    }

    /// Filled ellipse through its 360-vertex polygon.
    pub fn from_ellipse<T: Real>(e: &EllipseModel<T>, width: usize, height: usize) -> Self {
        Self::from_polygon(&e.polygon(ELLIPSE_POLYGON_VERTICES), width, height)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn intersection(&self, other: &Self) -> Result<usize> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(self.dims(), other.dims()));
        }
        Ok(self.mask.iter().zip(&other.mask).filter(|(a, b)| **a && **b).count())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard Dice `2|A∩B| / (|A| + |B|)`; 1 when both are empty.
pub fn dice(a: &RegionMask, b: &RegionMask) -> Result<f64> {
    let i = a.intersection(b)?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(ratio(2 * i, na + nb))
}

/// The variant with the union in the denominator, `2|A∩B| / |A∪B|`.
pub fn dice_union(a: &RegionMask, b: &RegionMask) -> Result<f64> {
    let i = a.intersection(b)?;
    let union = a.count() + b.count() - i;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(ratio(2 * i, union))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub oq: f64,
    pub dice: f64,
}

impl RegionMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        if tp + fp + fn_ == 0 {
            return Self { precision: 1.0, sensitivity: 1.0, oq: 1.0, dice: 1.0 };
        }
        Self {
            precision: ratio(tp, tp + fp),
            sensitivity: ratio(tp, tp + fn_),
            oq: ratio(tp, tp + fp + fn_),
            dice: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub const MISS: Self = Self { precision: 0.0, sensitivity: 0.0, oq: 0.0, dice: 0.0 };
}

pub fn region_metrics(pred: &RegionMask, gt: &RegionMask) -> Result<RegionMetrics> {
    let tp = pred.intersection(gt)?;
    Ok(RegionMetrics::from_counts(tp, pred.count() - tp, gt.count() - tp))
}

/// One-to-one assignment maximizing total score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matching {
    /// `(row, column)` pairs with positive score, by row.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Optimal assignment of rows to columns of `scores` (rows x cols), by
/// dynamic programming over subsets of columns. Pairs scoring 0 are left
/// unmatched.
pub fn optimal_assignment(scores: &[Vec<f64>]) -> Matching {
    let rows = scores.len();
    let cols = scores.first().map_or(0, |r| r.len());
    assert!(cols <= 20, "assignment over more than 20 columns is not supported");
    let full = 1usize << cols;
    // best[i][mask]: best total using rows i.. with columns in mask taken
    let mut best = vec![vec![0.0f64; full]; rows + 1];
    for i in (0..rows).rev() {
        for mask in 0..full {
            let mut b = best[i + 1][mask];
            for j in 0..cols {
                if mask & (1 << j) == 0 && scores[i][j] > 0.0 {
                    let v = scores[i][j] + best[i + 1][mask | (1 << j)];
                    if v > b {
                        b = v;
                    }
                }
            }
            best[i][mask] = b;
        }
    }
    let mut pairs = Vec::new();
    let mut mask = 0;
    for i in 0..rows {
        let target = best[i][mask];
        if best[i + 1][mask] == target {
            continue;
        }
        for j in 0..cols {
            if mask & (1 << j) == 0 && scores[i][j] > 0.0 && scores[i][j] + best[i + 1][mask | (1 << j)] == target {
                pairs.push((i, j));
                mask |= 1 << j;
                break;
            }
        }
    }
    Matching { pairs, total: best[0][0] }
}

/// Matches predicted regions to ground-truth regions maximizing total OQ.
pub fn match_detections(preds: &[RegionMask], gts: &[RegionMask]) -> Result<(Matching, Vec<Vec<RegionMetrics>>)> {
    let metrics: Vec<Vec<RegionMetrics>> =
        preds.iter().map(|p| gts.iter().map(|g| region_metrics(p, g)).collect::<Result<_>>()).collect::<Result<_>>()?;
    let oq: Vec<Vec<f64>> = metrics.iter().map(|row| row.iter().map(|m| m.oq).collect()).collect();
    Ok((optimal_assignment(&oq), metrics))
}

/// Annotation of one image: closed polygons in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image: String,
    pub n_cells: usize,
    pub artifact: bool,
    pub blastomeres: Vec<Vec<[f64; 2]>>,
}

impl GroundTruth {
    pub fn polygons<T: Real>(&self) -> Vec<Vec<Point2<T>>> {
        self.blastomeres.iter().map(|poly| poly.iter().map(|&[x, y]| Point2::new(T::of(x), T::of(y))).collect()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidParameter(format!("ground truth {}: {reason}", self.image)));
        if self.n_cells != self.blastomeres.len() {
            return bad(format!("n_cells = {} but {} polygons", self.n_cells, self.blastomeres.len()));
        }
        for (k, poly) in self.blastomeres.iter().enumerate() {
            if poly.len() < 3 {
                return bad(format!("polygon {k} has fewer than 3 vertices"));
            }
            if poly.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("polygon {k} has non-finite coordinates"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let gt: Self = serde_json::from_str(text)?;
        gt.validate()?;
        Ok(gt)
    }
}

/// Polygon points with extra samples so no edge is longer than one pixel.
pub fn densify<T: Real>(poly: &[Point2<T>]) -> Vec<Point2<T>> {
    let mut out = Vec::new();
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let steps = p.distance(q).ceil().to_usize().unwrap_or(1).max(1);
        for s in 0..steps {
            out.push(p + (q - p) * (T::of_usize(s) / T::of_usize(steps)));
        }
    }
    out
}

/// Direct least-squares ellipse through the densified polygon contour.
pub fn best_fit_ellipse<T: Real>(poly: &[Point2<T>]) -> Result<EllipseModel<T>> {
    if poly.len() < 5 {
        return Err(Error::Degenerate("best-fit ellipse needs at least five vertices"));
    }
    fit_ellipse_direct(&densify(poly))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub pred: Option<usize>,
    pub gt: Option<usize>,
    #[serde(flatten)]
    pub metrics: RegionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image: String,
    pub n_cells: usize,
    pub artifact: bool,
    pub n_predictions: usize,
    pub per_cell: Vec<CellEntry>,
    /// Mean over predicted cells.
    pub mean_precision: f64,
    /// Mean over annotated cells.
    pub mean_sensitivity: f64,
    /// Mean over all entries (matches, false detections and misses).
    pub mean_oq: f64,
    pub mean_dice: f64,
    /// Matched cells with OQ at or above the hit threshold.
    pub detected: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub oq_threshold: f64,
    /// Report the union-denominator Dice instead of the standard one.
    pub union_dice: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { oq_threshold: 0.7, union_dice: false }
    }
}

/// Compares predicted regions with ground-truth polygons on a `w x h` canvas.
pub fn evaluate_regions(
    image: &str,
    preds: &[RegionMask],
    gt: &GroundTruth,
    gt_masks: &[RegionMask],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (matching, metrics) = match_detections(preds, gt_masks)?;
    let mut per_cell = Vec::new();
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gt_masks.len()];
    for &(i, j) in &matching.pairs {
        let mut m = metrics[i][j];
        if opts.union_dice {
            m.dice = dice_union(&preds[i], &gt_masks[j])?;
        }
        per_cell.push(CellEntry { pred: Some(i), gt: Some(j), metrics: m });
        pred_used[i] = true;
        gt_used[j] = true;
    }
    for (i, _) in pred_used.iter().enumerate().filter(|(_, u)| !**u) {
        per_cell.push(CellEntry { pred: Some(i), gt: None, metrics: RegionMetrics::MISS });
    }
    for (j, _) in gt_used.iter().enumerate().filter(|(_, u)| !**u) {
        per_cell.push(CellEntry { pred: None, gt: Some(j), metrics: RegionMetrics::MISS });
    }
    let detected = per_cell.iter().filter(|c| c.pred.is_some() && c.gt.is_some() && c.metrics.oq >= opts.oq_threshold).count();
    Ok(EvalReport {
        image: image.to_string(),
        n_cells: gt.n_cells,
        artifact: gt.artifact,
        n_predictions: preds.len(),
        mean_precision: mean(per_cell.iter().filter(|c| c.pred.is_some()).map(|c| c.metrics.precision)),
        mean_sensitivity: mean(per_cell.iter().filter(|c| c.gt.is_some()).map(|c| c.metrics.sensitivity)),
        mean_oq: mean(per_cell.iter().map(|c| c.metrics.oq)),
        mean_dice: mean(per_cell.iter().map(|c| c.metrics.dice)),
        per_cell,
        detected,
    })
}

/// Per-image report for detected ellipses against a ground truth.
pub fn embryo_report<T: Real>(
    detections: &[EllipseModel<T>],
    gt: &GroundTruth,
    dims: (usize, usize),
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (w, h) = dims;
    let preds: Vec<RegionMask> = detections.iter().map(|e| RegionMask::from_ellipse(e, w, h)).collect();
    let gts: Vec<RegionMask> = gt.polygons::<f64>().iter().map(|p| RegionMask::from_polygon(p, w, h)).collect();
    evaluate_regions(&gt.image, &preds, gt, &gts, opts)
}

/// Means over one group of images (cell count x artifact flag).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n_cells: usize,
    pub artifact: bool,
    pub images: usize,
    pub mean_precision: f64,
    pub mean_sensitivity: f64,
    pub mean_oq: f64,
    pub detected: usize,
    pub annotated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub images: Vec<EvalReport>,
    pub groups: Vec<GroupSummary>,
    pub mean_precision: f64,
    pub mean_sensitivity: f64,
    pub mean_oq: f64,
    pub detected: usize,
    pub annotated: usize,
    /// `histogram[k]` = images in which exactly `k` cells were detected.
    pub detected_histogram: Vec<usize>,
}

impl BatchReport {
    pub fn new(images: Vec<EvalReport>) -> Self {
        let mut by_group: BTreeMap<(usize, bool), Vec<&EvalReport>> = BTreeMap::new();
        for r in &images {
            by_group.entry((r.n_cells, r.artifact)).or_default().push(r);
        }
        let groups = by_group
            .into_iter()
            .map(|((n_cells, artifact), rs)| GroupSummary {
                n_cells,
                artifact,
                images: rs.len(),
                mean_precision: mean(rs.iter().map(|r| r.mean_precision)),
                mean_sensitivity: mean(rs.iter().map(|r| r.mean_sensitivity)),
                mean_oq: mean(rs.iter().map(|r| r.mean_oq)),
                detected: rs.iter().map(|r| r.detected).sum(),
                annotated: rs.iter().map(|r| r.n_cells).sum(),
            })
            .collect();
        let max_detected = images.iter().map(|r| r.detected).max().unwrap_or(0);
        let mut detected_histogram = vec![0; max_detected + 1];
        for r in &images {
            detected_histogram[r.detected] += 1;
        }
        Self {
            mean_precision: mean(images.iter().map(|r| r.mean_precision)),
            mean_sensitivity: mean(images.iter().map(|r| r.mean_sensitivity)),
            mean_oq: mean(images.iter().map(|r| r.mean_oq)),
            detected: images.iter().map(|r| r.detected).sum(),
            annotated: images.iter().map(|r| r.n_cells).sum(),
            detected_histogram,
            groups,
            images,
        }
    }

    /// Aligned text table: one row per (cell count, artifact) group.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>5} {:>8} {:>6} {:>6} {:>6} {:>6} {:>10}", "cells", "artifact", "images", "Pre.", "Sen.", "OQ", "detected");
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:>5} {:>8} {:>6} {:>6.3} {:>6.3} {:>6.3} {:>10}",
                g.n_cells,
                if g.artifact { "yes" } else { "no" },
                g.images,
                g.mean_precision,
                g.mean_sensitivity,
                g.mean_oq,
                format!("{}/{}", g.detected, g.annotated)
            );
        }
        let _ = writeln!(
            out,
            "{:>5} {:>8} {:>6} {:>6.3} {:>6.3} {:>6.3} {:>10}",
            "all",
            "",
            self.images.len(),
            self.mean_precision,
            self.mean_sensitivity,
            self.mean_oq,
            format!("{}/{}", self.detected, self.annotated)
        );
        out
    }
}
