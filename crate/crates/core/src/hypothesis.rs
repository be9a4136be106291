//! Candidate blastomere ellipses: admissible sizes from the ZP, and placement
//! by frequency-domain correlation of rotated contour templates with the
//! edge map.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{EllipseModel, Point2};
use crate::image::GrayImage;
use crate::scalar::Real;
use crate::vesselness::EdgeMap;
use crate::zp::ZpModel;

/// Default number of template orientations, 10 degrees apart.
pub const ROTATIONS: usize = 18;

/// Contour samples that must stay inside the ZP for a placement to count.
pub const CONTAINMENT_SAMPLES: usize = 72;

/// Orientation of rotation `index` out of `count` evenly spaced over π.
pub fn rotation_angle<T: Real>(index: usize, count: usize) -> T {
    T::PI() * T::of_usize(index) / T::of_usize(count)
}

/// Constants of the admissible size band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionConstants {
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
    pub eta_few: f64,
    pub eta_many: f64,
    /// Counts at or above this use `eta_many`.
    pub many_from: usize,
}

impl Default for RegionConstants {
    fn default() -> Self {
        Self { lower: 0.7, upper: 1.0, slack: 0.15, eta_few: 1.6, eta_many: 1.3, many_from: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeRegion<T> {
    pub area_lo: T,
    pub area_hi: T,
    pub eta: T,
    pub n: usize,
}

impl<T: Real> SizeRegion<T> {
    /// Area band is open; the eccentricity wedge admits the circular limit.
    pub fn admits(&self, a: T, b: T) -> bool {
        let ab = a * b;
        self.area_lo < ab && ab < self.area_hi && b <= a && a < self.eta * b
    }
}

pub fn admissible_region<T: Real>(zp: &ZpModel<T>, n: usize, k: &RegionConstants) -> Result<SizeRegion<T>> {
    if !(1..=8).contains(&n) {
        return Err(Error::CellCount(n));
    }
    let nf = n as f64;
    let lo = k.lower / nf;
    let hi = (k.upper / nf + k.slack).min(1.0);
    let eta = if n < k.many_from { k.eta_few } else { k.eta_many };
    let ab = zp.axes_product();
    Ok(SizeRegion { area_lo: T::of(lo) * ab, area_hi: T::of(hi) * ab, eta: T::of(eta), n })
}

/// Uniform grid over the bounding box of the feasible `(a, b)` region with
/// `steps` samples per axis, keeping feasible pairs (a ascending, then b).
pub fn enumerate_axes<T: Real>(region: &SizeRegion<T>, steps: usize) -> Result<Vec<(T, T)>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("axis grid needs at least one step".into()));
    }
    let (a_lo, a_hi) = (region.area_lo.sqrt(), (region.area_hi * region.eta).sqrt());
    let (b_lo, b_hi) = ((region.area_lo / region.eta).sqrt(), region.area_hi.sqrt());
    let axis = |lo: T, hi: T| -> Vec<T> {
        if steps == 1 {
            return vec![(lo + hi) / T::of(2.0)];
        }
        (0..steps).map(|i| lo + (hi - lo) * T::of_usize(i) / T::of_usize(steps - 1)).collect()
    };
    let mut out = Vec::new();
    for a in axis(a_lo, a_hi) {
        for b in axis(b_lo, b_hi) {
            if region.admits(a, b) {
                out.push((a, b));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySizeRegion);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hypothesis<T> {
    pub ellipse: EllipseModel<T>,
    /// Weighted template hits divided by the best attainable count.
    pub correlation_score: T,
    pub compliance_score: T,
    pub rotation_index: usize,
    pub size_index: usize,
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// 2-D FFT on a row-major `w x h` buffer.
struct Fft2d<T: FftNum> {
    w: usize,
    h: usize,
    rows: Arc<dyn Fft<T>>,
    cols: Arc<dyn Fft<T>>,
    rows_inv: Arc<dyn Fft<T>>,
    cols_inv: Arc<dyn Fft<T>>,
}

impl<T: FftNum> Fft2d<T> {
    fn new(w: usize, h: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            w,
            h,
            rows: planner.plan_fft_forward(w),
            cols: planner.plan_fft_forward(h),
            rows_inv: planner.plan_fft_inverse(w),
            cols_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (rows, cols) = if inverse { (&self.rows_inv, &self.cols_inv) } else { (&self.rows, &self.cols) };
        rows.process(buf);
        let mut t = vec![Complex::new(T::zero(), T::zero()); buf.len()];
        transpose(buf, &mut t, self.w, self.h);
        cols.process(&mut t);
        transpose(&t, buf, self.h, self.w);
    }
}

fn transpose<T: Copy>(src: &[T], dst: &mut [T], w: usize, h: usize) {
    for y in 0..h {
        for x in 0..w {
            dst[x * h + y] = src[y * w + x];
        }
    }
}

/// Zero-padded correlation `out(x, y) = sum t(u, v) img(x + u - ox, y + v - oy)`
/// computed directly.
pub fn correlate_spatial<T: Real>(img: &GrayImage<T>, tpl: &GrayImage<T>, origin: (usize, usize)) -> GrayImage<T> {
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let mut s = T::zero();
        for v in 0..tpl.height() {
            for u in 0..tpl.width() {
                let t = tpl.get(u, v);
                if t == T::zero() {
                    continue;
                }
                let (ix, iy) = (x as isize + u as isize - origin.0 as isize, y as isize + v as isize - origin.1 as isize);
                if ix >= 0 && iy >= 0 && (ix as usize) < w && (iy as usize) < h {
                    s = s + t * img.get(ix as usize, iy as usize);
                }
            }
        }
        s
    })
}

/// Same correlation as [`correlate_spatial`] through the frequency domain.
pub fn correlate_fft<T: Real + FftNum>(img: &GrayImage<T>, tpl: &GrayImage<T>, origin: (usize, usize)) -> GrayImage<T> {
    let (w, h) = img.dims();
    let (pw, ph) = (smooth_size(w + tpl.width()), smooth_size(h + tpl.height()));
    let zero = Complex::new(T::zero(), T::zero());
    let mut fi = vec![zero; pw * ph];
    for y in 0..h {
        for x in 0..w {
            fi[y * pw + x].re = img.get(x, y);
        }
    }
    let mut ft = vec![zero; pw * ph];
    for v in 0..tpl.height() {
        for u in 0..tpl.width() {
            let ox = (u as isize - origin.0 as isize).rem_euclid(pw as isize) as usize;
            let oy = (v as isize - origin.1 as isize).rem_euclid(ph as isize) as usize;
            ft[oy * pw + ox].re = tpl.get(u, v);
        }
    }
    let fft = Fft2d::new(pw, ph);
    fft.run(&mut fi, false);
    fft.run(&mut ft, false);
    for (a, b) in fi.iter_mut().zip(&ft) {
        *a = *a * b.conj();
    }
    fft.run(&mut fi, true);
    let scale = T::one() / T::of_usize(pw * ph);
    GrayImage::from_fn(w, h, |x, y| fi[y * pw + x].re * scale)
}

/// Rasterized contour template of an ellipse centred at the origin.
#[derive(Debug, Clone)]
pub struct Template {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    /// Contour pixels with weight 2 plus their 3x3 dilation ring with
    /// weight 1, so that a one-pixel miss still scores but less.
    pub offsets: Vec<(i64, i64, u32)>,
    /// Pixel count of the undilated contour.
    pub contour_len: usize,
    samples: Vec<Point2<f64>>,
}

/// Weight of an on-contour template pixel.
pub const CONTOUR_WEIGHT: u32 = 2;

impl Template {
    pub fn new(a: f64, b: f64, phi: f64) -> Result<Self> {
        let e = EllipseModel::new(Point2::new(0.0, 0.0), a, b, phi)?;
        let contour = e.contour_offsets(Point2::new(0.0, 0.0));
        let on: std::collections::HashSet<(i64, i64)> = contour.iter().copied().collect();
        let mut cells: Vec<(i64, i64)> = contour
            .iter()
            .flat_map(|&(x, y)| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dx| (x + dx, y + dy))))
            .collect();
        cells.sort_by_key(|&(x, y)| (y, x));
        cells.dedup();
        let offsets = cells.into_iter().map(|q| (q.0, q.1, if on.contains(&q) { CONTOUR_WEIGHT } else { 1 })).collect();
        Ok(Self { a: e.a, b: e.b, phi: e.phi, offsets, contour_len: contour.len(), samples: e.polygon(CONTAINMENT_SAMPLES) })
    }

    /// Largest attainable correlation count.
    pub fn normalizer(&self) -> u32 {
        CONTOUR_WEIGHT * self.contour_len as u32
    }

    fn extent(&self) -> (i64, i64, i64, i64) {
        self.offsets.iter().fold((i64::MAX, i64::MAX, i64::MIN, i64::MIN), |(x0, y0, x1, y1), &(x, y, _)| {
            (x0.min(x), y0.min(y), x1.max(x), y1.max(y))
        })
    }
}

/// Horizontal extent of the ellipse interior on the line `y`.
fn row_interval(e: &EllipseModel<f64>, y: f64) -> Option<(f64, f64)> {
    let c = e.conic();
    let qa = c.a;
    let qb = c.b * y + c.d;
    let qc = c.c * y * y + c.e * y + c.f;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 || qa <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    Some(((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)))
}

/// Valid centre run on one crop row.
#[derive(Debug, Clone, Copy)]
struct Run {
    y: usize,
    x0: usize,
    x1: usize,
    start: usize,
}

#[derive(Debug, Clone)]
struct Entry {
    size_index: usize,
    rotation: usize,
    template: Template,
    runs: Vec<Run>,
    /// Run index per row from the first run's row; thin regions can skip rows.
    row_runs: Vec<Option<u32>>,
    counts: Vec<u32>,
    best: Option<(u32, usize, usize)>,
}

impl Entry {
    fn argmax(&self) -> Option<(u32, usize, usize)> {
        let mut best: Option<(u32, usize, usize)> = None;
        for r in &self.runs {
            for x in r.x0..=r.x1 {
                let v = self.counts[r.start + x - r.x0];
                if best.map_or(true, |(bv, _, _)| v > bv) {
                    best = Some((v, x, r.y));
                }
            }
        }
        best
    }

    fn slot(&self, x: i64, y: i64) -> Option<usize> {
        let first = self.runs.first()?.y as i64;
        let k = y - first;
        if k < 0 || k as usize >= self.row_runs.len() {
            return None;
        }
        let r = self.runs[self.row_runs[k as usize]? as usize];
        if x < r.x0 as i64 || x > r.x1 as i64 {
            return None;
        }
        Some(r.start + x as usize - r.x0)
    }
}

/// Correlation maps for a set of template sizes over all rotations,
/// restricted to centres that keep the template inside the ZP.
///
/// Counts are exact integers, so removing edges can be applied by
/// subtraction and argmax ties are broken deterministically.
#[derive(Debug, Clone)]
pub struct PlacementBank {
    origin: (i64, i64),
    sizes: Vec<(f64, f64)>,
    entries: Vec<Entry>,
}

impl PlacementBank {
    pub fn new<T: Real>(edges: &EdgeMap, zp: &ZpModel<T>, sizes: &[(T, T)], rotations: usize) -> Result<Self> {
        let zp_e: EllipseModel<f64> = zp.ellipse.cast();
        let (lo, hi) = zp_e.bounding_box();
        let margin = 4.0;
        let origin = ((lo.x - margin).floor() as i64, (lo.y - margin).floor() as i64);
        let cw = ((hi.x + margin).ceil() as i64 - origin.0 + 1) as usize;
        let ch = ((hi.y + margin).ceil() as i64 - origin.1 + 1) as usize;
        let (pw, ph) = (smooth_size(cw), smooth_size(ch));
        let fft = Fft2d::<f64>::new(pw, ph);
        let zero = Complex::new(0.0, 0.0);
        let mut spectrum = vec![zero; pw * ph];
        for (x, y) in edges.pixels() {
            let (cx, cy) = (x as i64 - origin.0, y as i64 - origin.1);
            if cx >= 0 && cy >= 0 && (cx as usize) < cw && (cy as usize) < ch {
                spectrum[cy as usize * pw + cx as usize].re = 1.0;
            }
        }
        fft.run(&mut spectrum, false);

        let sizes: Vec<(f64, f64)> = sizes.iter().map(|&(a, b)| (a.as_f64(), b.as_f64())).collect();
        let mut shells = Vec::new();
        for (si, &(a, b)) in sizes.iter().enumerate() {
            // a circle looks the same at every rotation
            let count = if a == b { 1 } else { rotations };
            for r in 0..count {
                let template = Template::new(a, b, rotation_angle::<f64>(r, rotations))?;
                let runs = valid_runs(&template, &zp_e, origin, cw, ch);
                shells.push((si, r, template, runs));
            }
        }
        // templates are packed two per complex transform
        let pairs: Vec<Vec<Entry>> = shells
            .chunks(2)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|chunk| {
                let mut buf = vec![zero; pw * ph];
                for (k, (_, _, t, _)) in chunk.iter().enumerate() {
                    for &(ox, oy, wt) in &t.offsets {
                        let i = oy.rem_euclid(ph as i64) as usize * pw + ox.rem_euclid(pw as i64) as usize;
                        if k == 0 {
                            buf[i].re = wt as f64;
                        } else {
                            buf[i].im = wt as f64;
                        }
                    }
                }
                fft.run(&mut buf, false);
                let mut prod = vec![zero; pw * ph];
                for ky in 0..ph {
                    for kx in 0..pw {
                        let i = ky * pw + kx;
                        let j = ((ph - ky) % ph) * pw + (pw - kx) % pw;
                        let z = buf[i];
                        let zm = buf[j].conj();
                        let t1 = (z + zm) * 0.5;
                        let t2 = (z - zm) * Complex::new(0.0, -0.5);
                        let e = spectrum[i];
                        prod[i] = e * t1.conj() + Complex::new(0.0, 1.0) * e * t2.conj();
                    }
                }
                fft.run(&mut prod, true);
                let scale = 1.0 / (pw * ph) as f64;
                chunk
                    .iter()
                    .enumerate()
                    .map(|(k, (si, r, t, runs))| {
                        let total: usize = runs.iter().map(|r| r.x1 + 1 - r.x0).sum();
                        let mut counts = Vec::with_capacity(total);
                        for run in runs {
                            for x in run.x0..=run.x1 {
                                let z = prod[run.y * pw + x] * scale;
                                let v = if k == 0 { z.re } else { z.im };
                                counts.push(v.round().max(0.0) as u32);
                            }
                        }
                        let mut row_runs = vec![None; runs.last().map_or(0, |l| l.y + 1 - runs[0].y)];
                        for (k, run) in runs.iter().enumerate() {
                            row_runs[run.y - runs[0].y] = Some(k as u32);
                        }
                        let mut e = Entry { size_index: *si, rotation: *r, template: t.clone(), runs: runs.clone(), row_runs, counts, best: None };
                        e.best = e.argmax();
                        e
                    })
                    .collect()
            })
            .collect();
        let entries = pairs.into_iter().flatten().collect();
        Ok(Self { origin, sizes, entries })
    }

    pub fn sizes(&self) -> &[(f64, f64)] {
        &self.sizes
    }

    /// Subtracts removed edge pixels from every correlation map.
    pub fn remove_pixels(&mut self, pixels: &[(usize, usize)]) {
        let origin = self.origin;
        self.entries.par_iter_mut().for_each(|e| {
            let mut best_hit = false;
            for &(px, py) in pixels {
                let (cx, cy) = (px as i64 - origin.0, py as i64 - origin.1);
                for &(ox, oy, wt) in &e.template.offsets {
                    if let Some(i) = e.slot(cx - ox, cy - oy) {
                        e.counts[i] = e.counts[i].saturating_sub(wt);
                        if let Some((_, bx, by)) = e.best {
                            if (cx - ox) as usize == bx && (cy - oy) as usize == by {
                                best_hit = true;
                            }
                        }
                    }
                }
            }
            // counts only fall, so an untouched argmax stays the argmax
            if best_hit {
                e.best = e.argmax();
            }
        });
    }

    fn hypothesis<T: Real>(&self, e: &Entry, (count, x, y): (u32, usize, usize)) -> Hypothesis<T> {
        let center = Point2::new(T::of((x as i64 + self.origin.0) as f64), T::of((y as i64 + self.origin.1) as f64));
        let t = &e.template;
        Hypothesis {
            ellipse: EllipseModel { center, a: T::of(t.a), b: T::of(t.b), phi: T::of(t.phi) },
            correlation_score: T::of(count as f64 / t.normalizer() as f64),
            compliance_score: T::zero(),
            rotation_index: e.rotation,
            size_index: e.size_index,
        }
    }

    /// Best placement of one size over all rotations.
    pub fn best_for_size<T: Real>(&self, size_index: usize) -> Option<Hypothesis<T>> {
        let mut best: Option<(&Entry, (u32, usize, usize))> = None;
        for e in self.entries.iter().filter(|e| e.size_index == size_index) {
            if let Some(b) = e.best {
                let better = match best {
                    None => true,
                    Some((_, cur)) => b.0 > cur.0,
                };
                if better {
                    best = Some((e, b));
                }
            }
        }
        best.map(|(e, b)| self.hypothesis(e, b))
    }

    /// Best placement of every (size, rotation) template, in bank order.
    pub fn candidates<T: Real>(&self) -> Vec<Hypothesis<T>> {
        self.entries.iter().filter_map(|e| e.best.map(|b| self.hypothesis(e, b))).collect()
    }

    /// Best placement for every size that fits the ZP, in size order.
    pub fn best_per_size<T: Real>(&self) -> Vec<Hypothesis<T>> {
        (0..self.sizes.len()).filter_map(|s| self.best_for_size(s)).collect()
    }
}

fn valid_runs(t: &Template, zp: &EllipseModel<f64>, origin: (i64, i64), cw: usize, ch: usize) -> Vec<Run> {
    let (ex0, ey0, ex1, ey1) = t.extent();
    let mut runs = Vec::new();
    let mut start = 0;
    for y in 0..ch as i64 {
        if y + ey0 < 0 || y + ey1 >= ch as i64 {
            continue;
        }
        let mut lo = (-ex0) as f64;
        let mut hi = (cw as i64 - 1 - ex1) as f64;
        let gy = (y + origin.1) as f64;
        for s in &t.samples {
            match row_interval(zp, gy + s.y) {
                Some((l, h)) => {
                    lo = lo.max(l - s.x - origin.0 as f64);
                    hi = hi.min(h - s.x - origin.0 as f64);
                }
                None => {
                    hi = -1.0;
                    break;
                }
            }
            if lo > hi {
                break;
            }
        }
        let (x0, x1) = (lo.ceil(), hi.floor());
        if x0 <= x1 && x1 >= 0.0 {
            let (x0, x1) = (x0.max(0.0) as usize, x1 as usize);
            runs.push(Run { y: y as usize, x0, x1, start });
            start += x1 + 1 - x0;
        }
    }
    runs
}

/// Best placement of a single template size.
pub fn best_placement<T: Real>(axes: (T, T), edges: &EdgeMap, zp: &ZpModel<T>) -> Result<Hypothesis<T>> {
    let bank = PlacementBank::new(edges, zp, &[axes], ROTATIONS)?;
    bank.best_for_size(0).ok_or(Error::NoValidPlacement { a: axes.0.as_f64(), b: axes.1.as_f64() })
}
