//! Synthetic embryo scenes with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, RegionMask, ELLIPSE_POLYGON_VERTICES};
use crate::geometry::{EllipseModel, Point2};
use crate::hypothesis::{admissible_region, RegionConstants, CONTAINMENT_SAMPLES};
use crate::image::GrayImage;
use crate::scalar::Real;
use crate::zp::ZpModel;

pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Gap kept between every cell and the inner zona boundary, in pixels.
pub const ZP_MARGIN: f64 = 3.0;

const RELAX_ITERATIONS: usize = 150;
const BACKGROUND: f64 = 0.12;
const PERIVITELLINE: f64 = 0.26;
const CYTOPLASM: f64 = 0.42;
const ZP_WIDTH: f64 = 14.0;
const ZP_PEAK: f64 = 0.55;
const ZP_RIM: f64 = 0.25;
const CELL_RIM: f64 = 0.3;
const OCCLUDED_RIM: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_cells: usize,
    pub zp_radius: f64,
    /// Largest allowed |A∩B| / min(|A|, |B|) between any two cells.
    pub overlap_max: f64,
    /// Fragment density: about `50 × fragmentation` blobs per embryo.
    pub fragmentation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub image_size: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cells: 4,
            zp_radius: 100.0,
            overlap_max: 0.2,
            fragmentation: 0.1,
            noise_sigma: 0.02,
            seed: 0,
            image_size: (256, 256),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.n_cells) {
            return Err(Error::CellCount(self.n_cells));
        }
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.zp_radius >= 10.0) {
            return bad("zp_radius must be at least 10 px");
        }
        if !(0.0..=1.0).contains(&self.overlap_max) {
            return bad("overlap_max must lie in [0, 1]");
        }
        if !(self.fragmentation >= 0.0 && self.fragmentation <= 1.0) {
            return bad("fragmentation must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        let (w, h) = self.image_size;
        let need = 2.0 * (self.zp_radius * 1.06 + ZP_WIDTH) + 4.0;
        if (w.min(h) as f64) < need {
            return bad(&format!("image {w}x{h} too small for zp_radius {}", self.zp_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthEmbryo<T> {
    pub image: GrayImage<T>,
    pub truth: GroundTruth,
    pub cells: Vec<EllipseModel<f64>>,
    /// Inner zona boundary.
    pub zp: EllipseModel<f64>,
    pub fragments: usize,
}

/// Overlap of two masks relative to the smaller one.
pub fn overlap_ratio(a: &RegionMask, b: &RegionMask) -> Result<f64> {
    let m = a.count().min(b.count());
    if m == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection(b)? as f64 / m as f64)
}

/// Radius of `e` along the direction `theta`.
fn radius_towards(e: &EllipseModel<f64>, theta: f64) -> f64 {
    let t = theta - e.phi;
    e.a * e.b / ((e.b * t.cos()).powi(2) + (e.a * t.sin()).powi(2)).sqrt()
}

fn inside_zp(zp: &EllipseModel<f64>, cell: &EllipseModel<f64>, samples: usize) -> bool {
    cell.polygon(samples).iter().all(|&p| zp.implicit(p) < 0.0 && signed_distance(zp, p) <= -ZP_MARGIN)
}

/// First-order signed distance to the contour, positive outside.
fn signed_distance(e: &EllipseModel<f64>, p: Point2<f64>) -> f64 {
    let d = e.sampson_distance(p);
    if e.implicit(p) < 0.0 {
        -d
    } else {
        d
    }
}

/// Cells with their orientation offset from the tangential direction.
fn sample_cells(rng: &mut ChaCha8Rng, zp: &EllipseModel<f64>, spec: &SynthSpec) -> Result<Vec<(EllipseModel<f64>, f64)>> {
    let model = ZpModel::from_ellipse(*zp);
    let region = admissible_region(&model, spec.n_cells, &RegionConstants::default())?;
    // dense stages draw from the lower part of the band so the cells fit
    let (f_lo, f_hi) = match spec.n_cells {
        1..=2 => (0.1, 0.5),
        3..=5 => (0.08, 0.35),
        _ => (0.03, 0.2),
    };
    let max_aspect = 0.95 * region.eta;
    let mut cells = Vec::with_capacity(spec.n_cells);
    for _ in 0..spec.n_cells {
        let area = region.area_lo + rng.gen_range(f_lo..f_hi) * (region.area_hi - region.area_lo);
        let aspect = rng.gen_range(1.0..max_aspect);
        let (a, b) = ((area * aspect).sqrt(), (area / aspect).sqrt());
        let r = rng.gen_range(0.0..0.5) * spec.zp_radius;
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let c = zp.center + Point2::new(r * t.cos(), r * t.sin());
        cells.push((EllipseModel::new(c, a, b, 0.0)?, rng.gen_range(-0.4..0.4)));
    }
    Ok(cells)
}

/// Major axis across the radius from the zona centre, plus a fixed offset.
fn orient(cell: &mut EllipseModel<f64>, zp: &EllipseModel<f64>, offset: f64) {
    let d = cell.center - zp.center;
    let phi = if d.norm() < 1e-6 { offset } else { d.y.atan2(d.x) + std::f64::consts::FRAC_PI_2 + offset };
    cell.phi = crate::scalar::wrap_pi(phi);
}

/// Pushes overlapping cells apart and pulls escaping cells back inside.
fn relax(cells: &mut [EllipseModel<f64>], offsets: &[f64], zp: &EllipseModel<f64>, separation: f64) {
    let n = cells.len();
    for _ in 0..RELAX_ITERATIONS {
        for (cell, &o) in cells.iter_mut().zip(offsets) {
            orient(cell, zp, o);
        }
        let mut moved = false;
        for i in 0..n {
            for j in i + 1..n {
                let d = cells[j].center - cells[i].center;
                let dist = d.norm().max(1e-6);
                let theta = d.y.atan2(d.x);
                let want = separation * (radius_towards(&cells[i], theta) + radius_towards(&cells[j], theta));
                if dist < want {
                    let dir = if d.norm() < 1e-6 { Point2::new(1.0, 0.0) } else { d * (1.0 / dist) };
                    let push = dir * (0.5 * (want - dist));
                    cells[i].center = cells[i].center - push;
                    cells[j].center = cells[j].center + push;
                    moved = true;
                }
            }
        }
        for cell in cells.iter_mut() {
            let excess = cell
                .polygon(CONTAINMENT_SAMPLES)
                .iter()
                .map(|&p| signed_distance(zp, p) + ZP_MARGIN + 0.5)
                .fold(f64::NEG_INFINITY, f64::max);
            if excess > 0.0 {
                let d = zp.center - cell.center;
                let len = d.norm();
                if len > 1e-9 {
                    cell.center = cell.center + d * (excess.min(len) / len);
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn placement_ok(cells: &[EllipseModel<f64>], zp: &EllipseModel<f64>, spec: &SynthSpec) -> Result<bool> {
    if !cells.iter().all(|c| inside_zp(zp, c, ELLIPSE_POLYGON_VERTICES)) {
        return Ok(false);
    }
    let (w, h) = spec.image_size;
    let masks: Vec<RegionMask> = cells.iter().map(|c| RegionMask::from_ellipse(c, w, h)).collect();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if overlap_ratio(&masks[i], &masks[j])? > spec.overlap_max {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Smooth value noise in roughly `[-1, 1]`, two octaves.
struct ValueNoise {
    grid: Vec<f64>,
    cols: usize,
    cell: f64,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let grid = (0..cols * rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { grid, cols, cell }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (u, v) = (x / self.cell, y / self.cell);
        let (i, j) = (u.floor() as usize, v.floor() as usize);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (s(u - u.floor()), s(v - v.floor()));
        let g = |i: usize, j: usize| self.grid[j * self.cols + i];
        let top = g(i, j) * (1.0 - fx) + g(i + 1, j) * fx;
        let bottom = g(i, j + 1) * (1.0 - fx) + g(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Renders one embryo and its ground truth. Deterministic in `spec.seed`.
pub fn generate_embryo<T: Real>(spec: &SynthSpec) -> Result<SynthEmbryo<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = spec.image_size;
    let centre = Point2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
        + Point2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
    let stretch = 1.0 + rng.gen_range(0.0..0.06);
    let zp = EllipseModel::new(centre, spec.zp_radius * stretch, spec.zp_radius / stretch, rng.gen_range(0.0..std::f64::consts::PI))?;

    let mut cells = None;
    for attempt in 0..MAX_PLACEMENT_ATTEMPTS {
        let separation = 0.95 - 0.25 * (attempt.min(200) as f64 / 200.0);
        let (mut trial, offsets): (Vec<_>, Vec<_>) = sample_cells(&mut rng, &zp, spec)?.into_iter().unzip();
        relax(&mut trial, &offsets, &zp, separation);
        if placement_ok(&trial, &zp, spec)? {
            cells = Some(trial);
            break;
        }
    }
    let cells = cells.ok_or(Error::Placement { n: spec.n_cells, overlap: spec.overlap_max, attempts: MAX_PLACEMENT_ATTEMPTS })?;

    let texture = [ValueNoise::new(&mut rng, w, h, 9.0), ValueNoise::new(&mut rng, w, h, 4.0)];
    let rim_sigma: Vec<f64> = cells.iter().map(|_| rng.gen_range(1.0..1.6)).collect();
    let relief: Vec<f64> = cells.iter().map(|_| rng.gen_range(0.03..0.08)).collect();
    let n_fragments = (50.0 * spec.fragmentation).round() as usize;
    let fragments: Vec<EllipseModel<f64>> = (0..n_fragments)
        .map(|_| {
            let r = rng.gen_range(0.0..0.9) * spec.zp_radius;
            let t = rng.gen_range(0.0..std::f64::consts::TAU);
            let c = zp.center + Point2::new(r * t.cos(), r * t.sin());
            let rad = rng.gen_range(2.0..4.5);
            EllipseModel::new(c, rad, rad * rng.gen_range(0.7..1.0), rng.gen_range(0.0..std::f64::consts::PI))
        })
        .collect::<Result<_>>()?;

    let outer_scale = (spec.zp_radius + ZP_WIDTH) / spec.zp_radius;
    let outer = EllipseModel::new(zp.center, zp.a * outer_scale, zp.b * outer_scale, zp.phi)?;
    let mut base = vec![0.0; w * h];
    let mut rims = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = Point2::from_pixel(x, y);
            let i = y * w + x;
            let d = signed_distance(&zp, p);
            base[i] = if d <= 0.0 {
                PERIVITELLINE
            } else if outer.contains(p) {
                let t = (d / ZP_WIDTH).min(1.0);
                BACKGROUND + ZP_PEAK * (1.0 - t).powf(1.5)
            } else {
                BACKGROUND
            };
            rims[i] = ZP_RIM * (-d * d / (2.0 * 1.2 * 1.2)).exp();
        }
    }
    for (k, cell) in cells.iter().enumerate() {
        let (lo, hi) = cell.bounding_box();
        let pad = 4.0 * rim_sigma[k];
        let x0 = (lo.x - pad).floor().max(0.0) as usize;
        let y0 = (lo.y - pad).floor().max(0.0) as usize;
        let x1 = ((hi.x + pad).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((hi.y + pad).ceil().max(0.0) as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = Point2::from_pixel(x, y);
                let i = y * w + x;
                if cell.contains(p) {
                    let q = cell.to_local(p);
                    let grain = 0.03 * texture[0].at(x as f64, y as f64) + 0.015 * texture[1].at(x as f64, y as f64);
                    base[i] = CYTOPLASM + relief[k] * (q.x / cell.a) + grain;
                    rims[i] *= OCCLUDED_RIM;
                }
                let d = signed_distance(cell, p);
                rims[i] += CELL_RIM * (-d * d / (2.0 * rim_sigma[k] * rim_sigma[k])).exp();
            }
        }
    }
    for f in &fragments {
        let (lo, hi) = f.bounding_box();
        for y in (lo.y - 4.0).max(0.0) as usize..=((hi.y + 4.0) as usize).min(h - 1) {
            for x in (lo.x - 4.0).max(0.0) as usize..=((hi.x + 4.0) as usize).min(w - 1) {
                let p = Point2::from_pixel(x, y);
                let i = y * w + x;
                if f.contains(p) {
                    base[i] = 0.3;
                }
                let d = signed_distance(f, p);
                rims[i] += 0.2 * (-d * d / 2.0).exp();
            }
        }
    }
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data: Vec<T> = base
        .iter()
        .zip(&rims)
        .map(|(b, r)| {
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            T::of((b + r + n).clamp(0.0, 1.0))
        })
        .collect();
    let image = GrayImage::from_vec(w, h, data)?;

    let truth = GroundTruth {
        image: format!("synth_n{}_s{}", spec.n_cells, spec.seed),
        n_cells: spec.n_cells,
        artifact: n_fragments > 0,
        blastomeres: cells
            .iter()
            .map(|c| c.polygon(ELLIPSE_POLYGON_VERTICES).iter().map(|p| [p.x, p.y]).collect())
            .collect(),
    };
    Ok(SynthEmbryo { image, truth, cells, zp, fragments: n_fragments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::dice;

    fn spec(n: usize, seed: u64) -> SynthSpec {
        SynthSpec { n_cells: n, seed, ..SynthSpec::default() }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_embryo::<f64>(&spec(3, 11)).unwrap();
        let b = generate_embryo::<f64>(&spec(3, 11)).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
        let c = generate_embryo::<f64>(&spec(3, 12)).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn single_clean_cell_matches_own_ellipse() {
        let s = SynthSpec { n_cells: 1, fragmentation: 0.0, noise_sigma: 0.0, seed: 5, ..SynthSpec::default() };
        let e = generate_embryo::<f64>(&s).unwrap();
        assert!(!e.truth.artifact);
        let (w, h) = s.image_size;
        let gt = RegionMask::from_polygon(&e.truth.polygons::<f64>()[0], w, h);
        assert_eq!(dice(&gt, &RegionMask::from_ellipse(&e.cells[0], w, h)).unwrap(), 1.0);
    }

    #[test]
    fn overlap_and_band_respected() {
        let k = RegionConstants::default();
        for n in [2, 4, 6, 8] {
            for seed in 0..3 {
                let s = spec(n, seed);
                let e = generate_embryo::<f64>(&s).unwrap();
                let (w, h) = s.image_size;
                let masks: Vec<_> = e.cells.iter().map(|c| RegionMask::from_ellipse(c, w, h)).collect();
                for i in 0..n {
                    for j in i + 1..n {
                        assert!(overlap_ratio(&masks[i], &masks[j]).unwrap() <= 0.2);
                    }
                }
                let region = admissible_region(&ZpModel::from_ellipse(e.zp), n, &k).unwrap();
                for c in &e.cells {
                    assert!(region.admits(c.a, c.b), "n={n} seed={seed}: {c:?}");
                    assert!(inside_zp(&e.zp, c, 360));
                    let analytic = RegionMask::from_fn(w, h, |x, y| c.contains(Point2::from_pixel(x, y)));
                    assert!(dice(&RegionMask::from_ellipse(c, w, h), &analytic).unwrap() >= 0.999);
                }
            }
        }
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(matches!(generate_embryo::<f64>(&spec(0, 1)), Err(Error::CellCount(0))));
        assert!(matches!(generate_embryo::<f64>(&spec(9, 1)), Err(Error::CellCount(9))));
        let small = SynthSpec { image_size: (100, 100), ..SynthSpec::default() };
        assert!(generate_embryo::<f64>(&small).is_err());
        // no room for eight cells that may not overlap at all
        let tight = SynthSpec { n_cells: 8, overlap_max: 0.0, ..SynthSpec::default() };
        assert!(matches!(generate_embryo::<f64>(&tight), Err(Error::Placement { .. })));
    }
}
