//! Multi-scale Hessian ridge ("vesselness") filtering and the edge map
//! derived from it: non-maxima suppression, hysteresis, cleanup.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{gaussian_smooth, GrayImage};
use crate::scalar::{wrap_pi, Real};

/// Scale-normalized Hessian components at one scale.
#[derive(Debug, Clone)]
pub struct HessianField<T> {
    pub xx: GrayImage<T>,
    pub xy: GrayImage<T>,
    pub yy: GrayImage<T>,
    pub sigma: T,
}

/// Hessian eigenvalues ordered by magnitude (`|lambda1| <= |lambda2|`) and the
/// orientation of the `lambda2` eigenvector, in `[0, π)`.
#[derive(Debug, Clone)]
pub struct HessianEigenField<T> {
    pub lambda1: GrayImage<T>,
    pub lambda2: GrayImage<T>,
    pub theta: GrayImage<T>,
    pub sigma: T,
}

#[derive(Debug, Clone)]
pub struct VesselnessResponse<T> {
    pub v: GrayImage<T>,
    /// Ridge-normal direction at the maximizing scale.
    pub orientation: GrayImage<T>,
    pub sigma_star: GrayImage<T>,
}

/// Frangi sensitivities. `beta = None` selects half the maximum
/// structureness observed over the image and all scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrangiParams<T> {
    pub alpha: T,
    pub beta: Option<T>,
}

/// Geometric scale ladder `sigma_min * r^k`, `k = 0..n`.
pub fn scale_ladder<T: Real>(sigma_min: T, sigma_max: T, n_scales: usize) -> Result<Vec<T>> {
    if !(sigma_min > T::zero()) || sigma_max < sigma_min || n_scales == 0 {
        return Err(Error::InvalidParameter(format!(
            "invalid scale range [{sigma_min}, {sigma_max}] with {n_scales} scales"
        )));
    }
    if n_scales == 1 {
        return Ok(vec![sigma_min]);
    }
    let ratio = (sigma_max / sigma_min).powf(T::one() / T::of_usize(n_scales - 1));
    Ok((0..n_scales).map(|k| sigma_min * ratio.powi(k as i32)).collect())
}

/// Second derivatives of the smoothed image, multiplied by `sigma²`.
pub fn hessian<T: Real>(img: &GrayImage<T>, sigma: T) -> Result<HessianField<T>> {
    let s = gaussian_smooth(img, sigma)?;
    let (w, h) = s.dims();
    let norm = sigma * sigma;
    let quarter = T::of(0.25);
    let two = T::of(2.0);
    let at = |x: usize, y: usize, dx: isize, dy: isize| s.get_clamped(x as isize + dx, y as isize + dy);
    let xx = GrayImage::from_fn(w, h, |x, y| (at(x, y, 1, 0) - two * at(x, y, 0, 0) + at(x, y, -1, 0)) * norm);
    let yy = GrayImage::from_fn(w, h, |x, y| (at(x, y, 0, 1) - two * at(x, y, 0, 0) + at(x, y, 0, -1)) * norm);
    let xy = GrayImage::from_fn(w, h, |x, y| {
        (at(x, y, 1, 1) - at(x, y, 1, -1) - at(x, y, -1, 1) + at(x, y, -1, -1)) * quarter * norm
    });
    Ok(HessianField { xx, xy, yy, sigma })
}

/// Closed-form eigen-decomposition of the symmetric 2x2 matrix
/// `[[xx, xy], [xy, yy]]`: `(lambda1, lambda2, theta)` with
/// `|lambda1| <= |lambda2|` and `theta` the `lambda2` eigenvector angle.
pub fn symmetric_eigen<T: Real>(xx: T, xy: T, yy: T) -> (T, T, T) {
    let two = T::of(2.0);
    let mean = (xx + yy) / two;
    let rad = (((xx - yy) / two).powi(2) + xy * xy).sqrt();
    let (hi, lo) = (mean + rad, mean - rad);
    // eigenvector angle of the algebraically larger eigenvalue
    let theta_hi = (two * xy).atan2(xx - yy) / two;
    if hi.abs() >= lo.abs() {
        (lo, hi, wrap_pi(theta_hi))
    } else {
        (hi, lo, wrap_pi(theta_hi + T::FRAC_PI_2()))
    }
}

impl<T: Real> HessianField<T> {
    pub fn eigen(&self) -> HessianEigenField<T> {
        let (w, h) = self.xx.dims();
        let mut lambda1 = GrayImage::new(w, h);
        let mut lambda2 = GrayImage::new(w, h);
        let mut theta = GrayImage::new(w, h);
        for i in 0..w * h {
            let (l1, l2, t) = symmetric_eigen(self.xx.data()[i], self.xy.data()[i], self.yy.data()[i]);
            lambda1.data_mut()[i] = l1;
            lambda2.data_mut()[i] = l2;
            theta.data_mut()[i] = t;
        }
        HessianEigenField { lambda1, lambda2, theta, sigma: self.sigma }
    }
}

pub fn hessian_eigen<T: Real>(img: &GrayImage<T>, sigma: T) -> Result<HessianEigenField<T>> {
    Ok(hessian(img, sigma)?.eigen())
}

impl<T: Real> HessianEigenField<T> {
    /// Largest Frobenius norm `sqrt(l1² + l2²)` in the field.
    pub fn max_structureness(&self) -> T {
        self.lambda1
            .data()
            .iter()
            .zip(self.lambda2.data())
            .map(|(&a, &b)| a.hypot(b))
            .fold(T::zero(), T::max)
    }
}

/// Per-pixel ridge likelihood for bright ridges on a dark surround.
#[inline]
pub fn vesselness_value<T: Real>(lambda1: T, lambda2: T, alpha: T, beta: T) -> T {
    if lambda2 >= T::zero() {
        // lambda2 > 0 is the dark-ridge case; lambda2 = 0 has zero structureness
        return T::zero();
    }
    let two = T::of(2.0);
    let rb = lambda1 / lambda2;
    let s2 = lambda1 * lambda1 + lambda2 * lambda2;
    (-(rb * rb) / (two * alpha * alpha)).exp() * (T::one() - (-s2 / (two * beta * beta)).exp())
}

pub fn vesselness_at_scale<T: Real>(field: &HessianEigenField<T>, alpha: T, beta: T) -> Result<VesselnessResponse<T>> {
    if !(alpha > T::zero()) || !(beta > T::zero()) {
        return Err(Error::InvalidParameter(format!("Frangi sensitivities must be positive ({alpha}, {beta})")));
    }
    let (w, h) = field.lambda1.dims();
    let v = GrayImage::from_fn(w, h, |x, y| {
        vesselness_value(field.lambda1.get(x, y), field.lambda2.get(x, y), alpha, beta)
    });
    Ok(VesselnessResponse {
        v,
        orientation: field.theta.clone(),
        sigma_star: GrayImage::from_fn(w, h, |_, _| field.sigma),
    })
}

/// Pointwise maximum of the single-scale responses over `scales`.
/// Ties keep the smaller scale.
pub fn multiscale_vesselness<T: Real>(
    img: &GrayImage<T>,
    scales: &[T],
    params: FrangiParams<T>,
) -> Result<VesselnessResponse<T>> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > T::zero())) {
        return Err(Error::InvalidParameter("scale ladder must be non-empty and positive".into()));
    }
    let fields: Vec<HessianEigenField<T>> =
        scales.par_iter().map(|&s| hessian_eigen(img, s)).collect::<Result<_>>()?;
    let beta = match params.beta {
        Some(b) => b,
        None => {
            let smax = fields.iter().map(|f| f.max_structureness()).fold(T::zero(), T::max);
            if smax == T::zero() {
                let (w, h) = img.dims();
                return Ok(VesselnessResponse {
                    v: GrayImage::new(w, h),
                    orientation: GrayImage::new(w, h),
                    sigma_star: GrayImage::from_fn(w, h, |_, _| scales[0]),
                });
            }
            smax / T::of(2.0)
        }
    };
    let mut best: Option<VesselnessResponse<T>> = None;
    for field in &fields {
        let r = vesselness_at_scale(field, params.alpha, beta)?;
        match best.as_mut() {
            None => best = Some(r),
            Some(acc) => {
                for i in 0..acc.v.data().len() {
                    if r.v.data()[i] > acc.v.data()[i] {
                        acc.v.data_mut()[i] = r.v.data()[i];
                        acc.orientation.data_mut()[i] = r.orientation.data()[i];
                        acc.sigma_star.data_mut()[i] = field.sigma;
                    }
                }
            }
        }
    }
    Ok(best.expect("at least one scale"))
}

/// Binary per-pixel edge mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

pub const NEIGHBORS8: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, mask: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.mask[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Out-of-range coordinates read as empty.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.mask[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Edge pixels in scanline order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS8.iter().filter(|(dx, dy)| self.get_signed(x as isize + dx, y as isize + dy)).count()
    }

    /// 8-connected components as pixel lists, discovered in scanline order.
    pub fn components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut seen = vec![false; self.mask.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.mask.len() {
            if !self.mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % self.width, i / self.width);
                comp.push((x, y));
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if self.get_signed(nx, ny) {
                        let j = ny as usize * self.width + nx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Writes the mask as an 8-bit image (edges white).
    pub fn to_image<T: Real>(&self) -> GrayImage<T> {
        GrayImage::from_fn(self.width, self.height, |x, y| if self.get(x, y) { T::one() } else { T::zero() })
    }
}

/// Non-maxima suppression across the ridge followed by hysteresis.
pub fn edge_map<T: Real>(resp: &VesselnessResponse<T>, low: T, high: T) -> Result<EdgeMap> {
    if !(T::zero() <= low && low <= high && high <= T::one()) {
        return Err(Error::InvalidParameter(format!("hysteresis thresholds must satisfy 0 <= {low} <= {high} <= 1")));
    }
    let (w, h) = resp.v.dims();
    let v = &resp.v;
    let mut thin = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = v.get(x, y);
            if c <= T::zero() {
                continue;
            }
            let (s, co) = resp.orientation.get(x, y).sin_cos();
            let dx = co.round().to_isize().unwrap_or(0);
            let dy = s.round().to_isize().unwrap_or(0);
            let fwd = v.get_clamped(x as isize + dx, y as isize + dy);
            let bwd = v.get_clamped(x as isize - dx, y as isize - dy);
            // asymmetric comparison keeps one pixel of a two-pixel plateau
            thin[y * w + x] = c > fwd && c >= bwd;
        }
    }
    let mut out = EdgeMap::new(w, h);
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] && v.data()[i] >= high {
            out.mask[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if thin[j] && !out.mask[j] && v.data()[j] >= low {
                out.mask[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(out)
}

/// Deletes 8-connected components with fewer than `min_segment_len` pixels.
pub fn clean_small_segments(edges: &EdgeMap, min_segment_len: usize) -> EdgeMap {
    let mut out = edges.clone();
    for comp in edges.components() {
        if comp.len() < min_segment_len {
            for (x, y) in comp {
                out.set(x, y, false);
            }
        }
    }
    out
}

/// Removes staircase corner pixels whose deletion keeps their neighbors
/// 8-connected, so traced curves are one pixel wide. Pixels with four or
/// more neighbors (true junctions) and curve ends are never removed.
pub fn thin_edges(edges: &EdgeMap) -> EdgeMap {
    let mut out = edges.clone();
    loop {
        let mut changed = false;
        for y in 0..out.height {
            for x in 0..out.width {
                if out.get(x, y) && is_redundant(&out, x, y) {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

fn is_redundant(m: &EdgeMap, x: usize, y: usize) -> bool {
    let ring: Vec<bool> = NEIGHBORS8.iter().map(|(dx, dy)| m.get_signed(x as isize + dx, y as isize + dy)).collect();
    let count = ring.iter().filter(|&&b| b).count();
    if !(2..=3).contains(&count) {
        return false;
    }
    // the neighbors must form one 8-connected group without the center
    let members: Vec<usize> = (0..8).filter(|&i| ring[i]).collect();
    let mut reached = vec![members[0]];
    let mut frontier = vec![members[0]];
    while let Some(i) = frontier.pop() {
        let (ix, iy) = NEIGHBORS8[i];
        for &j in &members {
            if reached.contains(&j) {
                continue;
            }
            let (jx, jy) = NEIGHBORS8[j];
            if (ix - jx).abs() <= 1 && (iy - jy).abs() <= 1 {
                reached.push(j);
                frontier.push(j);
            }
        }
    }
    reached.len() == members.len()
}

/// Clears edge pixels outside a centered disc of radius
/// `min(w, h) / 2 - margin`.
pub fn apply_border_margin(edges: &EdgeMap, margin: f64) -> EdgeMap {
    let (w, h) = edges.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let r = (w.min(h) as f64 / 2.0 - margin).max(0.0);
    let mut out = edges.clone();
    for (x, y) in edges.pixels() {
        if (x as f64 - cx).hypot(y as f64 - cy) > r {
            out.set(x, y, false);
        }
    }
    out
}
