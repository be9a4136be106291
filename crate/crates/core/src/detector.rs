//! Normal-compliance scoring of candidate ellipses and the iterative
//! detect-commit-remove loop that ties the pipeline together.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{build_clusters, co_associate, trace_curves, EdgeCluster};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{Conic, EllipseModel, Point2};
use crate::hypothesis::{admissible_region, enumerate_axes, Hypothesis, PlacementBank};
use crate::image::{gaussian_smooth, gradient, GradientField, GrayImage};
use crate::scalar::{orientation_gap, wrap_pi, Real};
use crate::vesselness::{
    apply_border_margin, clean_small_segments, edge_map, multiscale_vesselness, scale_ladder, thin_edges, EdgeMap,
    FrangiParams,
};
use crate::zp::{estimate_inner_zp, remove_zp_clusters, ZpModel};

/// Conic coefficients of the ellipse, normalized so that `a + c = 1`.
pub fn ellipse_conic<T: Real>(e: &EllipseModel<T>) -> Conic<T> {
    e.conic()
}

/// Direction of the conic gradient at `p`, modulo π.
pub fn model_normal_at<T: Real>(conic: &Conic<T>, p: Point2<T>) -> Result<T> {
    let g = conic.gradient(p);
    if g.norm() == T::zero() {
        return Err(Error::Degenerate("conic gradient vanishes"));
    }
    Ok(wrap_pi(g.angle()))
}

/// Per-pixel image normal: magnitude-weighted mean of doubled gradient
/// angles over a square window, halved back. Undefined (`None`) near the
/// border or where the window carries no gradient.
#[derive(Debug, Clone)]
pub struct NormalField<T> {
    width: usize,
    height: usize,
    dir: Vec<Option<T>>,
}

impl<T: Real> NormalField<T> {
    pub fn new(grad: &GradientField<T>, window: usize, floor: T) -> Self {
        let (w, h) = grad.dims();
        let dir = (0..w * h)
            .into_par_iter()
            .map(|i| image_normal_at(grad, (i % w, i / w), window, floor).ok().flatten())
            .collect();
        Self { width: w, height: h, dir }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<T> {
        self.dir[y * self.width + x]
    }

    pub fn get_signed(&self, x: isize, y: isize) -> Option<T> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        self.get(x as usize, y as usize)
    }
}

/// Image normal at one pixel from a `window x window` neighborhood.
pub fn image_normal_at<T: Real>(grad: &GradientField<T>, p: (usize, usize), window: usize, floor: T) -> Result<Option<T>> {
    let (w, h) = grad.dims();
    let r = window / 2;
    if p.0 < r || p.1 < r || p.0 + r >= w || p.1 + r >= h {
        return Err(Error::InvalidParameter(format!("normal window at {p:?} exits the {w}x{h} image")));
    }
    let (mut m_sum, mut c, mut s) = (T::zero(), T::zero(), T::zero());
    for y in p.1 - r..=p.1 + r {
        for x in p.0 - r..=p.0 + r {
            let (gx, gy, m) = (grad.gx.get(x, y), grad.gy.get(x, y), grad.magnitude.get(x, y));
            if m > T::zero() {
                m_sum = m_sum + m;
                c = c + (gx * gx - gy * gy) / m;
                s = s + T::of(2.0) * gx * gy / m;
            }
        }
    }
    if m_sum < floor || m_sum == T::zero() {
        return Ok(None);
    }
    Ok(Some(wrap_pi(s.atan2(c) / T::of(2.0))))
}

/// Tuning of the compliance test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplianceParams<T> {
    /// How far along the normal to look for an edge (pixels).
    pub slack: T,
    pub angle_gate: T,
    pub spacing: T,
}

impl<T: Real> ComplianceParams<T> {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            slack: T::of(cfg.detector.normal_slack),
            angle_gate: T::of(cfg.detector.angle_gate),
            spacing: T::of(cfg.detector.sample_spacing),
        }
    }
}

/// Nearest edge pixel to `s` along the direction `n` and its opposite,
/// stepping one pixel in the dominant axis at a time.
fn nearest_edge_along<T: Real>(edges: &EdgeMap, s: Point2<T>, n: Point2<T>, slack: T) -> Option<(usize, usize)> {
    let at = |p: Point2<T>| -> Option<(usize, usize)> {
        let (x, y) = (p.x.round().to_isize()?, p.y.round().to_isize()?);
        edges.get_signed(x, y).then_some((x as usize, y as usize))
    };
    if let Some(q) = at(s) {
        return Some(q);
    }
    let step = n * (T::one() / n.x.abs().max(n.y.abs()));
    let len = step.norm();
    let mut k = T::one();
    while k * len <= slack + T::of(1e-9) {
        for sign in [T::one(), -T::one()] {
            if let Some(q) = at(s + step * (k * sign)) {
                return Some(q);
            }
        }
        k = k + T::one();
    }
    None
}

/// Fraction of contour samples with a nearby edge whose image normal
/// agrees with the model normal.
pub fn compliance_score<T: Real>(e: &EllipseModel<T>, edges: &EdgeMap, normals: &NormalField<T>, p: &ComplianceParams<T>) -> T {
    let conic = e.conic();
    let samples = e.arc_length_samples(p.spacing);
    if samples.is_empty() {
        return T::zero();
    }
    let matched = samples
        .iter()
        .filter(|(s, _)| {
            let g = conic.gradient(*s);
            if g.norm() == T::zero() {
                return false;
            }
            let model = wrap_pi(g.angle());
            match nearest_edge_along(edges, *s, g * (T::one() / g.norm()), p.slack) {
                Some((x, y)) => normals.get(x, y).is_some_and(|img| orientation_gap(model, img) < p.angle_gate),
                None => false,
            }
        })
        .count();
    T::of_usize(matched) / T::of_usize(samples.len())
}

/// Removes edge pixels within `tol` (Sampson distance) of the contour whose
/// image normal agrees with the ellipse normal. Returns the new map and the
/// removed pixels in scanline order.
pub fn remove_matched_edges<T: Real>(
    edges: &EdgeMap,
    e: &EllipseModel<T>,
    tol: T,
    normals: &NormalField<T>,
    angle_gate: T,
) -> (EdgeMap, Vec<(usize, usize)>) {
    let (w, h) = edges.dims();
    let conic = e.conic();
    let (lo, hi) = e.bounding_box();
    let pad = tol + T::of(2.0);
    let clamp = |v: T, max: usize| v.max(T::zero()).min(T::of_usize(max.saturating_sub(1))).to_usize().unwrap_or(0);
    let (x0, x1) = (clamp((lo.x - pad).floor(), w), clamp((hi.x + pad).ceil(), w));
    let (y0, y1) = (clamp((lo.y - pad).floor(), h), clamp((hi.y + pad).ceil(), h));
    let mut out = edges.clone();
    let mut removed = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            if !edges.get(x, y) {
                continue;
            }
            let p = Point2::from_pixel(x, y);
            if e.sampson_distance(p) > tol {
                continue;
            }
            let agree = match (model_normal_at(&conic, p), normals.get(x, y)) {
                (Ok(m), Some(i)) => orientation_gap(m, i) < angle_gate,
                _ => false,
            };
            if agree {
                out.set(x, y, false);
                removed.push((x, y));
            }
        }
    }
    (out, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection<T> {
    pub ellipse: EllipseModel<T>,
    pub correlation: T,
    pub compliance: T,
}

/// Flat record of one detection, as written to detection files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    pub correlation: f64,
    pub compliance: f64,
}

impl DetectionRecord {
    pub fn ellipse<T: Real>(&self) -> Result<EllipseModel<T>> {
        EllipseModel::new(Point2::new(T::of(self.cx), T::of(self.cy)), T::of(self.a), T::of(self.b), T::of(self.phi))
    }
}

impl<T: Real> From<&Detection<T>> for DetectionRecord {
    fn from(d: &Detection<T>) -> Self {
        let e = &d.ellipse;
        Self {
            cx: e.center.x.as_f64(),
            cy: e.center.y.as_f64(),
            a: e.a.as_f64(),
            b: e.b.as_f64(),
            phi: e.phi.as_f64(),
            correlation: d.correlation.as_f64(),
            compliance: d.compliance.as_f64(),
        }
    }
}

/// Contents of a detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub image: String,
    pub n_requested: usize,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionReport {
    pub fn new<T: Real>(image: &str, result: &DetectionResult<T>) -> Self {
        Self { image: image.to_string(), n_requested: result.n_requested, detections: result.detections.iter().map(Into::into).collect() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("detection report serializes")
    }
}

/// Intermediate products kept for debugging and overlays.
#[derive(Debug, Clone)]
pub struct StageProducts<T> {
    pub edges: EdgeMap,
    pub clusters: Vec<EdgeCluster<T>>,
    pub interior_clusters: Vec<EdgeCluster<T>>,
    pub interior_edges: EdgeMap,
}

#[derive(Debug, Clone)]
pub struct DetectionResult<T> {
    pub detections: Vec<Detection<T>>,
    pub residual_edges: EdgeMap,
    pub n_requested: usize,
    pub zp: ZpModel<T>,
    /// True when the ZP could not be found and the image ellipse was used.
    pub zp_fallback: bool,
    pub stages: StageProducts<T>,
}

/// Vesselness edge map after hysteresis, cleanup, thinning and masking.
pub fn detect_edges<T: Real>(img: &GrayImage<T>, cfg: &PipelineConfig) -> Result<EdgeMap> {
    let e = &cfg.edges;
    let scales = scale_ladder(T::of(e.sigma_min), T::of(e.sigma_max), e.scales)?;
    let resp = multiscale_vesselness(img, &scales, FrangiParams { alpha: T::of(e.alpha), beta: e.beta.map(T::of) })?;
    let raw = edge_map(&resp, T::of(e.low), T::of(e.high))?;
    let mut edges = clean_small_segments(&thin_edges(&raw), e.min_segment_len);
    if let Some(m) = e.border_margin {
        edges = apply_border_margin(&edges, m);
    }
    Ok(edges)
}

fn cluster_edge_map<T: Real>(clusters: &[EdgeCluster<T>], w: usize, h: usize) -> EdgeMap {
    let mut m = EdgeMap::new(w, h);
    for c in clusters {
        for p in c.support() {
            if let Some((x, y)) = p.to_pixel(w, h) {
                m.set(x, y, true);
            }
        }
    }
    m
}

fn is_repeat<T: Real>(d: &Detection<T>, h: &Hypothesis<T>) -> bool {
    let (a, b) = (&d.ellipse, &h.ellipse);
    a.center.distance(b.center) <= T::of(2.0) && a.a == b.a && a.b == b.b && a.phi == b.phi
}

/// Full pipeline: edges, clusters, ZP, then `n` rounds of
/// hypothesize-score-commit-remove.
pub fn detect_blastomeres<T: Real>(img: &GrayImage<T>, n: usize, cfg: &PipelineConfig) -> Result<DetectionResult<T>> {
    if !(1..=8).contains(&n) {
        return Err(Error::CellCount(n));
    }
    cfg.validate()?;
    let (w, h) = img.dims();
    let edges = detect_edges(img, cfg)?;
    let chains = trace_curves(&edges);
    let clusters = co_associate(&build_clusters(&chains, T::of(cfg.clustering.epsilon)), &cfg.co_association());

    let origin = match cfg.zp.center {
        Some((x, y)) => Point2::new(T::of(x), T::of(y)),
        None => Point2::new(T::of_usize(w - 1), T::of_usize(h - 1)) * T::of(0.5),
    };
    let zp_params = cfg.zp_params();
    let (zp, zp_fallback) = match estimate_inner_zp(&clusters, origin, &zp_params) {
        Ok(zp) => (zp, false),
        Err(err) if !cfg.zp.fallback => return Err(err),
        Err(_) => {
            let center = Point2::new(T::of_usize(w - 1), T::of_usize(h - 1)) * T::of(0.5);
            let e = EllipseModel::new(center, T::of_usize(w) / T::of(2.0) - T::of(2.0), T::of_usize(h) / T::of(2.0) - T::of(2.0), T::zero())?;
            (ZpModel::from_ellipse(e), true)
        }
    };
    let interior_clusters = if zp_fallback { clusters.clone() } else { remove_zp_clusters(&clusters, &zp, &zp_params) };
    let interior_edges = cluster_edge_map(&interior_clusters, w, h);

    let d = &cfg.detector;
    let grad = gradient(&gaussian_smooth(img, T::of(d.gradient_sigma))?)?;
    let normals = NormalField::new(&grad, d.normal_window, T::of(d.magnitude_floor));
    let params = ComplianceParams::from_config(cfg);

    let region = admissible_region(&zp, n, &cfg.region_constants())?;
    let sizes = enumerate_axes(&region, cfg.hypothesis.axis_steps)?;
    let mut bank = PlacementBank::new(&interior_edges, &zp, &sizes, cfg.hypothesis.rotations)?;
    let mut work = interior_edges.clone();
    let mut detections: Vec<Detection<T>> = Vec::new();
    for _ in 0..n {
        let mut cands: Vec<Hypothesis<T>> = bank.candidates();
        cands.retain(|c| !detections.iter().any(|det| is_repeat(det, c)));
        // stable sort keeps bank order (size, rotation) among equal scores
        cands.sort_by(|x, y| y.correlation_score.partial_cmp(&x.correlation_score).unwrap());
        cands.truncate(d.top_k);
        let scored: Vec<T> = cands.par_iter().map(|c| compliance_score(&c.ellipse, &work, &normals, &params)).collect();
        let mut best: Option<usize> = None;
        for (i, c) in cands.iter().enumerate() {
            let better = match best {
                None => true,
                Some(j) => {
                    let b = &cands[j];
                    let key = |s: T, h: &Hypothesis<T>| (s, h.correlation_score, -h.ellipse.center.y, -h.ellipse.center.x);
                    key(scored[i], c) > key(scored[j], b)
                }
            };
            if better {
                best = Some(i);
            }
        }
        let Some(i) = best else { break };
        if scored[i] < T::of(d.compliance_floor) {
            break;
        }
        let chosen = cands[i];
        let (next, removed) = remove_matched_edges(&work, &chosen.ellipse, T::of(d.removal_tolerance), &normals, params.angle_gate);
        work = next;
        bank.remove_pixels(&removed);
        detections.push(Detection { ellipse: chosen.ellipse, correlation: chosen.correlation_score, compliance: scored[i] });
    }
    Ok(DetectionResult {
        detections,
        residual_edges: work,
        n_requested: n,
        zp,
        zp_fallback,
        stages: StageProducts { edges, clusters, interior_clusters, interior_edges },
    })
}
