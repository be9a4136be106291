//! Inner zona pellucida boundary: radial-beam sampling, robust ellipse fit
//! and removal of the clusters that trace it.

use serde::{Deserialize, Serialize};

use crate::clustering::EdgeCluster;
use crate::error::{Error, Result};
use crate::geometry::{fit_ellipse_direct, EllipseModel, Point2};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZpModel<T> {
    pub ellipse: EllipseModel<T>,
    /// Mean distance from the centre to the boundary.
    pub mean_radius: T,
}

impl<T: Real> ZpModel<T> {
    pub fn from_ellipse(ellipse: EllipseModel<T>) -> Self {
        let n = 360;
        let sum = ellipse.polygon(n).iter().fold(T::zero(), |acc, p| acc + p.distance(ellipse.center));
        Self { ellipse, mean_radius: sum / T::of_usize(n) }
    }

    /// `A_e * B_e`, the product of the semi-axes.
    pub fn axes_product(&self) -> T {
        self.ellipse.a * self.ellipse.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZpParams {
    pub beams: usize,
    pub max_rounds: usize,
    /// Samples whose residual exceeds this multiple of the median are dropped.
    pub reject_factor: f64,
    /// Residuals below this many pixels are never rejected.
    pub residual_floor: f64,
    pub vertex_tolerance: f64,
    pub centroid_tolerance: f64,
    pub contour_samples: usize,
}

impl Default for ZpParams {
    fn default() -> Self {
        Self {
            beams: 360,
            max_rounds: 5,
            reject_factor: 2.0,
            residual_floor: 0.5,
            vertex_tolerance: 0.02,
            centroid_tolerance: 0.10,
            contour_samples: 720,
        }
    }
}

/// Outermost cluster point on each 1-degree beam from `origin`.
pub fn beam_samples<T: Real>(clusters: &[EdgeCluster<T>], origin: Point2<T>, beams: usize) -> Vec<Point2<T>> {
    let mut best: Vec<Option<(T, Point2<T>)>> = vec![None; beams];
    let two_pi = T::of(2.0) * T::PI();
    for c in clusters {
        for &p in c.support() {
            let d = p - origin;
            let r = d.norm();
            if r == T::zero() {
                continue;
            }
            let mut ang = d.angle();
            if ang < T::zero() {
                ang = ang + two_pi;
            }
            let k = ((ang / two_pi * T::of_usize(beams)).to_usize().unwrap_or(0)).min(beams - 1);
            if best[k].map_or(true, |(br, _)| r > br) {
                best[k] = Some((r, p));
            }
        }
    }
    best.into_iter().flatten().map(|(_, p)| p).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ellipse fit with iterative rejection of samples far from the current fit.
pub fn robust_ellipse_fit<T: Real>(samples: &[Point2<T>], params: &ZpParams) -> Result<EllipseModel<T>> {
    let mut kept: Vec<Point2<T>> = samples.to_vec();
    if kept.len() < 5 {
        return Err(Error::NoZonaPellucida(kept.len()));
    }
    let mut fit = fit_ellipse_direct(&kept).map_err(|_| Error::NoZonaPellucida(kept.len()))?;
    for _ in 0..params.max_rounds {
        let contour = fit.polygon(params.contour_samples);
        let residuals: Vec<f64> = kept.iter().map(|&p| fit.sampled_contour_distance(p, &contour).as_f64()).collect();
        let cut = (params.reject_factor * median(residuals.clone())).max(params.residual_floor);
        let next: Vec<Point2<T>> =
            kept.iter().zip(&residuals).filter(|(_, &r)| r <= cut).map(|(&p, _)| p).collect();
        if next.len() == kept.len() {
            break;
        }
        if next.len() < 5 {
            return Err(Error::NoZonaPellucida(next.len()));
        }
        kept = next;
        fit = fit_ellipse_direct(&kept).map_err(|_| Error::NoZonaPellucida(kept.len()))?;
    }
    Ok(fit)
}

pub fn estimate_inner_zp<T: Real>(clusters: &[EdgeCluster<T>], origin: Point2<T>, params: &ZpParams) -> Result<ZpModel<T>> {
    let samples = beam_samples(clusters, origin, params.beams);
    robust_ellipse_fit(&samples, params).map(ZpModel::from_ellipse)
}

/// True when the cluster traces the ZP boundary itself.
pub fn is_zp_cluster<T: Real>(cluster: &EdgeCluster<T>, zp: &ZpModel<T>, contour: &[Point2<T>], params: &ZpParams) -> bool {
    let tol = T::of(params.vertex_tolerance) * zp.mean_radius;
    let on_contour = cluster.vertices.iter().all(|&v| zp.ellipse.sampled_contour_distance(v, contour) <= tol);
    if !on_contour {
        return false;
    }
    match cluster.centroid {
        Some(c) => c.distance(zp.ellipse.center) <= T::of(params.centroid_tolerance) * zp.mean_radius,
        // straight fragments have no arc centre: the contour test decides
        None => true,
    }
}

/// Drops clusters on the ZP boundary and clusters entirely outside it.
pub fn remove_zp_clusters<T: Real>(clusters: &[EdgeCluster<T>], zp: &ZpModel<T>, params: &ZpParams) -> Vec<EdgeCluster<T>> {
    let contour = zp.ellipse.polygon(params.contour_samples);
    clusters
        .iter()
        .filter(|c| !is_zp_cluster(c, zp, &contour, params))
        .filter(|c| c.support().iter().any(|&p| zp.ellipse.contains(p)))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::PixelChain;
    use std::f64::consts::PI;

    fn arc(cx: f64, cy: f64, r: f64, t0: f64, t1: f64) -> EdgeCluster<f64> {
        let n = ((t1 - t0) * r * 3.0).ceil() as usize + 2;
        let mut pts: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
            let q = ((cx + r * t.cos()).round() as usize, (cy + r * t.sin()).round() as usize);
            if !pts.contains(&q) {
                pts.push(q);
            }
        }
        EdgeCluster::from_chain(&PixelChain { points: pts, closed: false }, 2.0).unwrap()
    }

    fn ring(r: f64) -> Vec<EdgeCluster<f64>> {
        (0..4).map(|k| arc(300.0, 300.0, r, k as f64 * PI / 2.0, (k + 1) as f64 * PI / 2.0 - 0.02)).collect()
    }

    #[test]
    fn circle_is_recovered() {
        let zp = estimate_inner_zp(&ring(200.0), Point2::new(300.0, 300.0), &ZpParams::default()).unwrap();
        assert!((zp.ellipse.a - 200.0).abs() <= 2.0 && (zp.ellipse.b - 200.0).abs() <= 2.0);
        assert!((zp.mean_radius - 200.0).abs() <= 2.0);
    }

    #[test]
    fn spurs_are_rejected() {
        let mut clusters = ring(200.0);
        // spurs on 10% of the beams poke out to radius 260
        for k in 0..36 {
            let t = (k as f64 * 10.0 + 3.0).to_radians();
            clusters.push(EdgeCluster::from_parts(
                vec![Point2::new(300.0 + 255.0 * t.cos(), 300.0 + 255.0 * t.sin()), Point2::new(300.0 + 260.0 * t.cos(), 300.0 + 260.0 * t.sin())],
                vec![],
                false,
            ));
        }
        let zp = estimate_inner_zp(&clusters, Point2::new(300.0, 300.0), &ZpParams::default()).unwrap();
        assert!((zp.ellipse.a - 200.0).abs() <= 5.0 && (zp.ellipse.b - 200.0).abs() <= 5.0, "{:?}", zp.ellipse);
    }

    #[test]
    fn empty_input_fails() {
        let r = estimate_inner_zp::<f64>(&[], Point2::new(0.0, 0.0), &ZpParams::default());
        assert!(matches!(r, Err(Error::NoZonaPellucida(0))));
    }

    #[test]
    fn removal_cases() {
        let zp = ZpModel::from_ellipse(EllipseModel::circle(Point2::new(300.0, 300.0), 200.0).unwrap());
        let p = ZpParams::default();
        let on_zp = arc(300.0, 300.0, 200.0, 0.3, 1.2);
        let interior = arc(300.0, 300.0, 100.0, 0.3, 1.2);
        // hugs the boundary but bends around a centre 0.3 radius away
        let off = arc(360.0, 300.0, 140.0, -0.25, 0.25);
        let outside = arc(300.0, 300.0, 230.0, 0.3, 1.0);
        let out = remove_zp_clusters(&[on_zp, interior.clone(), off.clone(), outside], &zp, &p);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].vertices, interior.vertices);
        let c = off.centroid.unwrap();
        assert!(c.distance(zp.ellipse.center) > 0.1 * zp.mean_radius);
    }
}
