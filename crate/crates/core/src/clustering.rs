//! Edge clusters: curve tracing, piecewise-linear approximation under a
//! uniform error bound, arc geometry and co-association of fragments.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Point2};
use crate::scalar::Real;
use crate::vesselness::{EdgeMap, NEIGHBORS8};

/// Ordered 8-connected run of edge pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelChain {
    pub points: Vec<(usize, usize)>,
    pub closed: bool,
}

impl PixelChain {
    pub fn to_points<T: Real>(&self) -> Vec<Point2<T>> {
        self.points.iter().map(|&(x, y)| Point2::from_pixel(x, y)).collect()
    }
}

/// Splits the edge map into chains. Pixels with three or more edge
/// neighbors are junctions; chains stop there and junction pixels are then
/// handed out one at a time to adjacent chain ends.
pub fn trace_curves(edges: &EdgeMap) -> Vec<PixelChain> {
    let (w, h) = edges.dims();
    let idx = |x: usize, y: usize| y * w + x;
    let junction: Vec<bool> = (0..w * h)
        .map(|i| edges.mask()[i] && edges.neighbor_count(i % w, i / w) >= 3)
        .collect();
    let open_pixel = |x: isize, y: isize| -> bool {
        edges.get_signed(x, y) && !junction[y as usize * w + x as usize]
    };
    // 4-neighbors first so walks do not skip corners
    const ORDER: [usize; 8] = [0, 2, 4, 6, 1, 3, 5, 7];
    let path_neighbors = |x: usize, y: usize| -> Vec<(usize, usize)> {
        ORDER
            .iter()
            .map(|&k| NEIGHBORS8[k])
            .filter(|(dx, dy)| open_pixel(x as isize + dx, y as isize + dy))
            .map(|(dx, dy)| ((x as isize + dx) as usize, (y as isize + dy) as usize))
            .collect()
    };

    let mut assigned = vec![false; w * h];
    let mut chains: Vec<PixelChain> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !edges.get(x, y) || junction[idx(x, y)] || assigned[idx(x, y)] {
                continue;
            }
            // collect the junction-free component and look for an end
            let mut comp = vec![(x, y)];
            let mut seen: HashSet<(usize, usize)> = HashSet::from([(x, y)]);
            let mut k = 0;
            while k < comp.len() {
                let (cx, cy) = comp[k];
                for q in path_neighbors(cx, cy) {
                    if !assigned[idx(q.0, q.1)] && seen.insert(q) {
                        comp.push(q);
                    }
                }
                k += 1;
            }
            let start = comp
                .iter()
                .copied()
                .filter(|&(px, py)| path_neighbors(px, py).len() <= 1)
                .min_by_key(|&(px, py)| (py, px));
            let is_cycle = start.is_none();
            let start = start.unwrap_or((x, y));
            let mut points = vec![start];
            assigned[idx(start.0, start.1)] = true;
            let mut cur = start;
            while let Some(next) = path_neighbors(cur.0, cur.1).into_iter().find(|q| !assigned[idx(q.0, q.1)]) {
                assigned[idx(next.0, next.1)] = true;
                points.push(next);
                cur = next;
            }
            let closed = is_cycle && points.len() >= 4 && {
                let (a, b) = (points[0], *points.last().unwrap());
                a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1
            };
            chains.push(PixelChain { points, closed });
        }
    }

    // hand junction pixels to adjacent chain ends, one per end per pass
    let mut pending: Vec<(usize, usize)> = (0..w * h).filter(|&i| junction[i]).map(|i| (i % w, i / w)).collect();
    loop {
        let mut progress = false;
        for chain in chains.iter_mut().filter(|c| !c.closed) {
            for at_tail in [true, false] {
                let end = if at_tail { *chain.points.last().unwrap() } else { chain.points[0] };
                let pick = ORDER
                    .iter()
                    .map(|&k| NEIGHBORS8[k])
                    .map(|(dx, dy)| (end.0 as isize + dx, end.1 as isize + dy))
                    .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
                    .map(|(nx, ny)| (nx as usize, ny as usize))
                    .find(|&(nx, ny)| junction[idx(nx, ny)] && !assigned[idx(nx, ny)]);
                if let Some(q) = pick {
                    assigned[idx(q.0, q.1)] = true;
                    if at_tail {
                        chain.points.push(q);
                    } else {
                        chain.points.insert(0, q);
                    }
                    progress = true;
                }
            }
        }
        pending.retain(|&(px, py)| !assigned[idx(px, py)]);
        if !progress || pending.is_empty() {
            break;
        }
    }
    // isolated junction blobs: grow chains greedily through them
    for &(px, py) in &pending {
        if assigned[idx(px, py)] {
            continue;
        }
        assigned[idx(px, py)] = true;
        let mut points = vec![(px, py)];
        let mut cur = (px, py);
        loop {
            let next = ORDER
                .iter()
                .map(|&k| NEIGHBORS8[k])
                .map(|(dx, dy)| (cur.0 as isize + dx, cur.1 as isize + dy))
                .filter(|&(nx, ny)| edges.get_signed(nx, ny))
                .map(|(nx, ny)| (nx as usize, ny as usize))
                .find(|&(nx, ny)| !assigned[idx(nx, ny)]);
            match next {
                Some(q) => {
                    assigned[idx(q.0, q.1)] = true;
                    points.push(q);
                    cur = q;
                }
                None => break,
            }
        }
        chains.push(PixelChain { points, closed: false });
    }
    chains
}

/// Feasible direction interval of lines through the anchor point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeInterval<T> {
    pub theta_min: T,
    pub theta_max: T,
}

impl<T: Real> ConeInterval<T> {
    /// Directions `psi ± asin(eps / dist)` of lines passing within `eps` of a
    /// point at bearing `psi` and distance `dist > eps`.
    pub fn around(psi: T, dist: T, epsilon: T) -> Self {
        let half = (epsilon / dist).min(T::one()).asin();
        Self { theta_min: psi - half, theta_max: psi + half }
    }

    pub fn intersect(self, o: Self) -> Self {
        Self { theta_min: self.theta_min.max(o.theta_min), theta_max: self.theta_max.min(o.theta_max) }
    }

    pub fn is_empty(&self) -> bool {
        self.theta_min > self.theta_max
    }

    pub fn contains(&self, theta: T) -> bool {
        self.theta_min <= theta && theta <= self.theta_max
    }
}

fn wrap_signed<T: Real>(a: T) -> T {
    let two_pi = T::of(2.0) * T::PI();
    let mut r = a % two_pi;
    if r > T::PI() {
        r = r - two_pi;
    } else if r <= -T::PI() {
        r = r + two_pi;
    }
    r
}

fn segment_fits<T: Real>(points: &[Point2<T>], from: usize, to: usize, epsilon: T) -> bool {
    points[from + 1..to].iter().all(|&p| point_segment_distance(p, points[from], points[to]) <= epsilon)
}

/// Greedy longest-feasible-segment approximation. Returns vertex indices
/// into `points`; the first and last points are always vertices and every
/// point lies within `epsilon` of its segment.
pub fn piecewise_linear_approx<T: Real>(points: &[Point2<T>], epsilon: T) -> Result<Vec<usize>> {
    if points.len() < 2 {
        return Err(Error::Degenerate("chain needs at least two points"));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = points.len();
    let mut vertices = vec![0];
    let mut anchor = 0;
    while anchor < n - 1 {
        let origin = points[anchor];
        let mut cone: Option<ConeInterval<T>> = None;
        let mut reference: Option<T> = None;
        let mut last_ok = anchor + 1;
        for i in anchor + 1..n {
            let d = points[i] - origin;
            let dist = d.norm();
            let feasible = if dist <= epsilon {
                match (cone, reference) {
                    (Some(c), Some(r)) if dist > T::zero() => c.contains(wrap_signed(d.angle() - r)),
                    _ => true,
                }
            } else {
                let r = *reference.get_or_insert(d.angle());
                let psi = wrap_signed(d.angle() - r);
                let s = ConeInterval::around(psi, dist, epsilon);
                let t = cone.map_or(s, |c| c.intersect(s));
                if t.is_empty() {
                    break;
                }
                cone = Some(t);
                t.contains(psi)
            };
            if feasible && segment_fits(points, anchor, i, epsilon) {
                last_ok = i;
            }
        }
        vertices.push(last_ok);
        anchor = last_ok;
    }
    Ok(vertices)
}

/// Point minimizing the summed squared distances to the perpendicular
/// bisectors of the polyline segments, with the residual sum.
pub fn arch_centroid<T: Real>(vertices: &[Point2<T>]) -> Result<(Point2<T>, T)> {
    if vertices.len() < 3 {
        return Err(Error::Degenerate("arch centroid needs two segments"));
    }
    // work relative to the vertex mean for conditioning
    let n = T::of_usize(vertices.len());
    let mean = vertices.iter().fold(Point2::new(T::zero(), T::zero()), |acc, &p| acc + p) * (T::one() / n);
    let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    let mut lines = Vec::with_capacity(vertices.len() - 1);
    for w in vertices.windows(2) {
        let (p1, p2) = (w[0] - mean, w[1] - mean);
        let normal = p1 - p2;
        let len = normal.norm();
        if len == T::zero() {
            continue;
        }
        let half = T::of(0.5);
        let c = half * (p1.x * p1.x - p2.x * p2.x + p1.y * p1.y - p2.y * p2.y);
        let (nx, ny, c) = (normal.x / len, normal.y / len, c / len);
        sxx = sxx + nx * nx;
        sxy = sxy + nx * ny;
        syy = syy + ny * ny;
        bx = bx + nx * c;
        by = by + ny * c;
        lines.push((nx, ny, c));
    }
    let det = sxx * syy - sxy * sxy;
    let trace = sxx + syy;
    if lines.len() < 2 || det <= T::of(1e-10) * trace * trace {
        return Err(Error::Degenerate("perpendicular bisectors are parallel"));
    }
    let px = (syy * bx - sxy * by) / det;
    let py = (sxx * by - sxy * bx) / det;
    let residual = lines.iter().fold(T::zero(), |acc, &(nx, ny, c)| acc + (nx * px + ny * py - c).powi(2));
    Ok((Point2::new(px, py) + mean, residual))
}

/// `(radius, arch_length, arch_angle)` of a polyline about `centroid`.
pub fn cluster_properties<T: Real>(vertices: &[Point2<T>], centroid: Point2<T>) -> Result<(T, T, T)> {
    let (first, last) = match (vertices.first(), vertices.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::Degenerate("empty polyline")),
    };
    let two = T::of(2.0);
    let radius = (first.distance(centroid) + last.distance(centroid)) / two;
    if !(radius > T::zero()) {
        return Err(Error::Degenerate("zero radius"));
    }
    let arch_length = vertices.windows(2).fold(T::zero(), |acc, w| acc + w[0].distance(w[1]));
    let (u1, u2) = (centroid - first, centroid - last);
    let mu = u1.cross(u2).atan2(u1.dot(u2)).abs();
    // the chord angle is ambiguous between mu and its reflex complement
    let span = arch_length / radius;
    let reflex = two * T::PI() - mu;
    let arch_angle = if (reflex - span).abs() < (mu - span).abs() { reflex } else { mu };
    Ok((radius, arch_length, arch_angle))
}

/// Twice the quadratic coefficient of the parabola through three points,
/// `None` when two abscissae coincide.
pub fn concavity_coefficient<T: Real>(p1: Point2<T>, p2: Point2<T>, p3: Point2<T>) -> Option<T> {
    let (d12, d13, d23) = (p1.x - p2.x, p1.x - p3.x, p2.x - p3.x);
    if d12 == T::zero() || d13 == T::zero() || d23 == T::zero() {
        return None;
    }
    let two = T::of(2.0);
    Some(two * p1.y / (d12 * d13) + two * p2.y / (-d12 * d23) + two * p3.y / (d13 * d23))
}

/// Concavity in the frame where the chord `p1 -> p3` is the +x axis.
pub fn local_concavity<T: Real>(p1: Point2<T>, p2: Point2<T>, p3: Point2<T>) -> Option<T> {
    let chord = p3 - p1;
    if chord.norm() == T::zero() {
        return None;
    }
    let rot = -chord.angle();
    concavity_coefficient(Point2::new(T::zero(), T::zero()), (p2 - p1).rotate(rot), chord.rotate(rot))
}

/// Sign of the local concavity; near-straight triples count as 0.
fn triple_sign<T: Real>(p1: Point2<T>, p2: Point2<T>, p3: Point2<T>) -> i8 {
    let (a, b) = (p2 - p1, p3 - p2);
    let denom = a.norm() * b.norm();
    if denom == T::zero() || (a.cross(b) / denom).abs() < T::of(0.02) {
        return 0;
    }
    match local_concavity(p1, p2, p3) {
        Some(c) if c > T::zero() => 1,
        Some(c) if c < T::zero() => -1,
        _ => 0,
    }
}

fn polyline_sign<T: Real>(v: &[Point2<T>]) -> i8 {
    let total: i32 = v.windows(3).map(|w| triple_sign(w[0], w[1], w[2]) as i32).sum();
    total.signum() as i8
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeCluster<T> {
    pub vertices: Vec<Point2<T>>,
    /// The traced pixels the polyline approximates, in order.
    pub pixels: Vec<Point2<T>>,
    pub closed: bool,
    pub centroid: Option<Point2<T>>,
    pub radius: T,
    pub arch_length: T,
    pub arch_angle: T,
}

impl<T: Real> EdgeCluster<T> {
    pub fn from_chain(chain: &PixelChain, epsilon: T) -> Result<Self> {
        let mut pts: Vec<Point2<T>> = chain.to_points();
        if chain.closed {
            pts.push(pts[0]);
        }
        let idx = piecewise_linear_approx(&pts, epsilon)?;
        let vertices = idx.iter().map(|&i| pts[i]).collect();
        if chain.closed {
            pts.pop();
        }
        Ok(Self::from_parts(vertices, pts, chain.closed))
    }

    pub fn from_parts(vertices: Vec<Point2<T>>, pixels: Vec<Point2<T>>, closed: bool) -> Self {
        let mut c = Self {
            vertices,
            pixels,
            closed,
            centroid: None,
            radius: T::zero(),
            arch_length: T::zero(),
            arch_angle: T::zero(),
        };
        c.refresh();
        c
    }

    /// Recomputes the derived arc geometry from the vertices.
    pub fn refresh(&mut self) {
        self.arch_length = self.vertices.windows(2).fold(T::zero(), |acc, w| acc + w[0].distance(w[1]));
        self.centroid = None;
        self.radius = T::zero();
        self.arch_angle = T::zero();
        if let Ok((c, _)) = arch_centroid(&self.vertices) {
            if let Ok((r, _, angle)) = cluster_properties(&self.vertices, c) {
                self.centroid = Some(c);
                self.radius = r;
                self.arch_angle = angle;
            }
        }
    }

    pub fn head(&self) -> Point2<T> {
        self.vertices[0]
    }

    pub fn tail(&self) -> Point2<T> {
        *self.vertices.last().unwrap()
    }

    pub fn reversed(&self) -> Self {
        let mut r = self.clone();
        r.vertices.reverse();
        r.pixels.reverse();
        r
    }

    /// Points to sample when locating the cluster (pixels when available).
    pub fn support(&self) -> &[Point2<T>] {
        if self.pixels.is_empty() {
            &self.vertices
        } else {
            &self.pixels
        }
    }

    fn end_tangent(&self, window: usize) -> Point2<T> {
        let pts = self.support();
        let k = window.min(pts.len() - 1);
        pts[pts.len() - 1] - pts[pts.len() - 1 - k]
    }

    fn start_tangent(&self, window: usize) -> Point2<T> {
        let pts = self.support();
        let k = window.min(pts.len() - 1);
        pts[k] - pts[0]
    }
}

/// Builds clusters for every chain with at least two pixels.
pub fn build_clusters<T: Real>(chains: &[PixelChain], epsilon: T) -> Vec<EdgeCluster<T>> {
    chains.iter().filter(|c| c.points.len() >= 2).filter_map(|c| EdgeCluster::from_chain(c, epsilon).ok()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoAssociation<T> {
    /// Maximum change of direction across a join (radians).
    pub slope_gate: T,
    /// Maximum centroid displacement as a fraction of the original radius.
    pub centroid_gate: T,
    /// Endpoints farther apart than this are not neighbors (pixels).
    pub max_gap: T,
    /// Pixels used to estimate the direction at a cluster end.
    pub tangent_window: usize,
}

impl<T: Real> Default for CoAssociation<T> {
    fn default() -> Self {
        Self { slope_gate: T::PI() / T::of(8.0), centroid_gate: T::of(0.25), max_gap: T::of(15.0), tangent_window: 8 }
    }
}

/// Orients the pair so that the join runs from `a`'s tail to `b`'s head.
fn orient_pair<T: Real>(a: &EdgeCluster<T>, b: &EdgeCluster<T>) -> (T, EdgeCluster<T>, EdgeCluster<T>) {
    let options = [
        (a.tail().distance(b.head()), false, false),
        (a.tail().distance(b.tail()), false, true),
        (a.head().distance(b.head()), true, false),
        (a.head().distance(b.tail()), true, true),
    ];
    let (gap, rev_a, rev_b) = options.into_iter().fold(options[0], |best, o| if o.0 < best.0 { o } else { best });
    let a = if rev_a { a.reversed() } else { a.clone() };
    let b = if rev_b { b.reversed() } else { b.clone() };
    (gap, a, b)
}

fn angle_between<T: Real>(u: Point2<T>, v: Point2<T>) -> T {
    u.cross(v).atan2(u.dot(v)).abs()
}

/// Merges `a` (tail) with `b` (head) when slope, centroid and concavity
/// tests all pass.
pub fn try_merge<T: Real>(a: &EdgeCluster<T>, b: &EdgeCluster<T>, p: &CoAssociation<T>) -> Option<EdgeCluster<T>> {
    let (gap, a, b) = orient_pair(a, b);
    if gap > p.max_gap || a.closed || b.closed {
        return None;
    }
    // slope: directions at the two ends facing the join
    let ta = a.end_tangent(p.tangent_window);
    let tb = b.start_tangent(p.tangent_window);
    if ta.norm() == T::zero() || tb.norm() == T::zero() || angle_between(ta, tb) >= p.slope_gate {
        return None;
    }
    let join = b.head() - a.tail();
    if join.norm() >= T::of(4.0) {
        let mean = ta * (T::one() / ta.norm()) + tb * (T::one() / tb.norm());
        if angle_between(mean, join) >= p.slope_gate {
            return None;
        }
    }
    // concavity: both fragments and the triples spanning the join agree
    let (sa, sb) = (polyline_sign(&a.vertices), polyline_sign(&b.vertices));
    if sa != 0 && sb != 0 && sa != sb {
        return None;
    }
    let expected = if sa != 0 { sa } else { sb };
    let mut vertices = a.vertices.clone();
    vertices.extend_from_slice(&b.vertices);
    let j = a.vertices.len();
    for k in j.saturating_sub(2)..j {
        if k + 2 < vertices.len() {
            let s = triple_sign(vertices[k], vertices[k + 1], vertices[k + 2]);
            if s != 0 && expected != 0 && s != expected {
                return None;
            }
        }
    }
    let mut pixels = a.pixels.clone();
    pixels.extend_from_slice(&b.pixels);
    let merged = EdgeCluster::from_parts(vertices, pixels, false);
    // centroid: the merged arc centre stays near each original centre
    let mut checked = false;
    for orig in [&a, &b] {
        if let Some(c) = orig.centroid {
            checked = true;
            match merged.centroid {
                Some(m) if m.distance(c) < p.centroid_gate * orig.radius => {}
                _ => return None,
            }
        }
    }
    if !checked && merged.centroid.is_some() {
        return None;
    }
    Some(merged)
}

/// Repeatedly merges the neighboring pair with the smallest endpoint gap
/// that passes all tests, until no pair does.
pub fn co_associate<T: Real>(clusters: &[EdgeCluster<T>], params: &CoAssociation<T>) -> Vec<EdgeCluster<T>> {
    let mut work: Vec<(usize, EdgeCluster<T>)> = clusters.iter().cloned().enumerate().collect();
    let mut next_id = work.len();
    let mut rejected: HashSet<(usize, usize)> = HashSet::new();
    loop {
        let mut candidates: Vec<(T, usize, usize)> = Vec::new();
        for i in 0..work.len() {
            for j in i + 1..work.len() {
                let (a, b) = (&work[i].1, &work[j].1);
                if a.closed || b.closed || rejected.contains(&(work[i].0, work[j].0)) {
                    continue;
                }
                let gap = [
                    a.tail().distance(b.head()),
                    a.tail().distance(b.tail()),
                    a.head().distance(b.head()),
                    a.head().distance(b.tail()),
                ]
                .into_iter()
                .fold(T::infinity(), T::min);
                if gap <= params.max_gap {
                    candidates.push((gap, i, j));
                }
            }
        }
        candidates.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut merged_any = false;
        for (_, i, j) in candidates {
            match try_merge(&work[i].1, &work[j].1, params) {
                Some(m) => {
                    work[i] = (next_id, m);
                    next_id += 1;
                    work.remove(j);
                    merged_any = true;
                    break;
                }
                None => {
                    rejected.insert((work[i].0, work[j].0));
                }
            }
        }
        if !merged_any {
            return work.into_iter().map(|(_, c)| c).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    fn arc_pixels(cx: f64, cy: f64, r: f64, t0: f64, t1: f64) -> Vec<(usize, usize)> {
        let n = ((t1 - t0).abs() * r * 4.0).ceil() as usize + 1;
        let mut out: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            let t = t0 + (t1 - t0) * k as f64 / (n - 1) as f64;
            let q = ((cx + r * t.cos()).round() as usize, (cy + r * t.sin()).round() as usize);
            if out.last() != Some(&q) && !out.contains(&q) {
                out.push(q);
            }
        }
        out
    }

    fn arc_cluster(cx: f64, cy: f64, r: f64, t0: f64, t1: f64) -> EdgeCluster<f64> {
        EdgeCluster::from_chain(&PixelChain { points: arc_pixels(cx, cy, r, t0, t1), closed: false }, 2.0).unwrap()
    }

    #[test]
    fn empty_map_has_no_chains() {
        assert!(trace_curves(&EdgeMap::new(10, 10)).is_empty());
    }

    #[test]
    fn open_arc_is_one_chain() {
        let px = arc_pixels(50.0, 50.0, 30.0, 0.2, 2.0);
        let mut m = EdgeMap::new(100, 100);
        for &(x, y) in &px {
            m.set(x, y, true);
        }
        let m = crate::vesselness::thin_edges(&m);
        let chains = trace_curves(&m);
        assert_eq!(chains.len(), 1);
        assert_eq!(chains[0].points.len(), m.count());
        assert!(!chains[0].closed);
        for w in chains[0].points.windows(2) {
            assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
        }
    }

    #[test]
    fn plus_sign_splits_into_four_chains() {
        let mut m = EdgeMap::new(21, 21);
        for k in 3..18 {
            m.set(10, k, true);
            m.set(k, 10, true);
        }
        // census: pixels with three or more neighbors form the junction
        let census: Vec<_> = m.pixels().filter(|&(x, y)| m.neighbor_count(x, y) >= 3).collect();
        assert_eq!(census.len(), 5);
        let chains = trace_curves(&m);
        assert_eq!(chains.len(), 4);
        let total: usize = chains.iter().map(|c| c.points.len()).sum();
        assert_eq!(total, m.count());
        let mut all: Vec<_> = chains.iter().flat_map(|c| c.points.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), m.count());
        for c in &chains {
            for w in c.points.windows(2) {
                assert!(w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1);
            }
        }
    }

    #[test]
    fn closed_curve_is_flagged() {
        let e = crate::geometry::EllipseModel::circle(p(30.0, 30.0), 15.0).unwrap();
        let mut m = EdgeMap::new(60, 60);
        for (dx, dy) in e.contour_offsets(p(0.0, 0.0)) {
            m.set(dx as usize, dy as usize, true);
        }
        let m = crate::vesselness::thin_edges(&m);
        let chains = trace_curves(&m);
        assert_eq!(chains.len(), 1);
        assert!(chains[0].closed);
    }

    #[test]
    fn collinear_chain_two_vertices() {
        let pts: Vec<_> = (0..50).map(|k| p(k as f64, 3.0 + 0.5 * k as f64)).collect();
        assert_eq!(piecewise_linear_approx(&pts, 2.0).unwrap(), vec![0, 49]);
    }

    #[test]
    fn right_angle_recovers_corner() {
        let mut pts: Vec<_> = (0..20).map(|k| p(k as f64, 0.0)).collect();
        pts.extend((1..20).map(|k| p(19.0, k as f64)));
        let v = piecewise_linear_approx(&pts, 0.5).unwrap();
        assert_eq!(v, vec![0, 19, 38]);
    }

    #[test]
    fn approximation_errors() {
        assert!(piecewise_linear_approx(&[p(0.0, 0.0)], 2.0).is_err());
        assert!(piecewise_linear_approx(&[p(0.0, 0.0), p(1.0, 0.0)], 0.0).is_err());
    }

    /// Minimal segment count with vertices restricted to chain points.
    fn dp_min_segments(pts: &[Point2<f64>], eps: f64) -> usize {
        let n = pts.len();
        let mut best = vec![usize::MAX; n];
        best[0] = 0;
        for j in 1..n {
            for i in 0..j {
                if best[i] != usize::MAX
                    && pts[i + 1..j].iter().all(|&q| point_segment_distance(q, pts[i], pts[j]) <= eps)
                {
                    best[j] = best[j].min(best[i] + 1);
                }
            }
        }
        best[n - 1]
    }

    #[test]
    fn circle_approximation_near_optimal() {
        let e = crate::geometry::EllipseModel::circle(p(60.0, 60.0), 40.0).unwrap();
        let mut m = EdgeMap::new(120, 120);
        for (dx, dy) in e.contour_offsets(p(0.0, 0.0)) {
            m.set(dx as usize, dy as usize, true);
        }
        let chain = trace_curves(&crate::vesselness::thin_edges(&m)).remove(0);
        let mut pts: Vec<Point2<f64>> = chain.to_points();
        pts.push(pts[0]);
        let idx = piecewise_linear_approx(&pts, 2.0).unwrap();
        for w in idx.windows(2) {
            for q in &pts[w[0]..=w[1]] {
                assert!(point_segment_distance(*q, pts[w[0]], pts[w[1]]) <= 2.0);
            }
        }
        let optimal = dp_min_segments(&pts, 2.0);
        assert!(idx.len() - 1 <= optimal + 2, "{} vs {}", idx.len() - 1, optimal);
    }

    #[test]
    fn cone_interval_basics() {
        let c = ConeInterval::around(0.0f64, 10.0, 2.0);
        assert!(c.contains(0.0) && !c.is_empty());
        assert!((c.theta_max - (0.2f64).asin()).abs() < 1e-12);
        let d = c.intersect(ConeInterval::around(1.0, 10.0, 2.0));
        assert!(d.is_empty());
    }

    #[test]
    fn centroid_of_circle_points() {
        let pts: Vec<_> = [0.3, 1.2, 2.5].iter().map(|t: &f64| p(100.0 + 50.0 * t.cos(), 80.0 + 50.0 * t.sin())).collect();
        let (c, res) = arch_centroid(&pts).unwrap();
        assert!((c.x - 100.0).abs() < 1e-9 && (c.y - 80.0).abs() < 1e-9);
        assert!(res < 1e-12);
        let line: Vec<_> = (0..5).map(|k| p(k as f64, 2.0 * k as f64)).collect();
        assert!(arch_centroid(&line).is_err());
    }

    #[test]
    fn centroid_is_equivariant() {
        let pts: Vec<_> = [0.1, 0.7, 1.1, 1.9].iter().map(|t: &f64| p(20.0 + 30.0 * t.cos(), 10.0 + 33.0 * t.sin())).collect();
        let (c, _) = arch_centroid(&pts).unwrap();
        let (theta, shift) = (0.83, p(-41.0, 17.5));
        let moved: Vec<_> = pts.iter().map(|q| q.rotate(theta) + shift).collect();
        let (c2, _) = arch_centroid(&moved).unwrap();
        assert!(c2.distance(c.rotate(theta) + shift) < 1e-9);
    }

    #[test]
    fn semicircle_and_quarter_properties() {
        let semi: Vec<_> = (0..=12).map(|k| p(50.0 * (PI * k as f64 / 12.0).cos(), 50.0 * (PI * k as f64 / 12.0).sin())).collect();
        let (c, _) = arch_centroid(&semi).unwrap();
        let (r, len, ang) = cluster_properties(&semi, c).unwrap();
        assert!((r - 50.0).abs() <= 1.0);
        assert!((ang - PI).abs() <= 0.1);
        assert!((len - PI * 50.0).abs() <= 3.0);
        let quarter: Vec<_> =
            (0..=8).map(|k| p(40.0 * (PI / 2.0 * k as f64 / 8.0).cos(), 40.0 * (PI / 2.0 * k as f64 / 8.0).sin())).collect();
        let (c, _) = arch_centroid(&quarter).unwrap();
        let (_, _, ang) = cluster_properties(&quarter, c).unwrap();
        assert!((ang - PI / 2.0).abs() <= 0.1);
        assert!(cluster_properties(&[p(1.0, 1.0), p(1.0, 1.0)], p(1.0, 1.0)).is_err());
    }

    #[test]
    fn reflex_arc_angle() {
        let arc: Vec<_> = (0..=20).map(|k| {
            let t = 1.5 * PI * k as f64 / 20.0;
            p(30.0 * t.cos(), 30.0 * t.sin())
        }).collect();
        let (c, _) = arch_centroid(&arc).unwrap();
        let (_, _, ang) = cluster_properties(&arc, c).unwrap();
        assert!((ang - 1.5 * PI).abs() < 0.1, "{ang}");
    }

    #[test]
    fn concavity_examples() {
        assert!((concavity_coefficient(p(0.0, 0.0), p(1.0, 1.0), p(2.0, 4.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!((concavity_coefficient(p(0.0, 0.0), p(1.0, -1.0), p(2.0, -4.0)).unwrap() + 2.0).abs() < 1e-12);
        assert_eq!(concavity_coefficient(p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)).unwrap(), 0.0);
        assert!(concavity_coefficient(p(1.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)).is_none());
        // vertical alignment handled in the chord frame
        assert!(local_concavity(p(0.0, 0.0), p(1.0, 5.0), p(0.0, 10.0)).is_some());
    }

    #[test]
    fn split_circle_halves_merge() {
        let a = arc_cluster(100.0, 100.0, 50.0, 0.0, PI - 0.06);
        let b = arc_cluster(100.0, 100.0, 50.0, PI + 0.0, 2.0 * PI - 0.1);
        let out = co_associate(&[a, b], &CoAssociation::default());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn concentric_arcs_do_not_merge() {
        let inner = arc_cluster(100.0, 100.0, 30.0, 0.0, 1.5);
        let outer = arc_cluster(100.0, 100.0, 60.0, 1.5, 3.0);
        let params = CoAssociation { max_gap: 40.0, slope_gate: PI, ..CoAssociation::default() };
        // independent check: merging the vertex lists moves the centre too far
        let (inner_c, outer_c) = (inner.centroid.unwrap(), outer.centroid.unwrap());
        let mut joined = inner.vertices.clone();
        joined.extend(outer.vertices.iter().copied());
        let (mc, _) = arch_centroid(&joined).unwrap();
        assert!(mc.distance(inner_c) > 0.25 * inner.radius || mc.distance(outer_c) > 0.25 * outer.radius);
        assert_eq!(co_associate(&[inner, outer], &params).len(), 2);
    }

    #[test]
    fn s_shaped_pair_does_not_merge() {
        // left-turning arc followed by a right-turning one
        let a = arc_cluster(100.0, 100.0, 40.0, PI, 1.5 * PI);
        let tail = a.tail();
        let b_pixels: Vec<(usize, usize)> = arc_pixels(tail.x, tail.y - 40.0 + 80.0, 40.0, -0.5 * PI, -PI)
            .into_iter()
            .collect();
        let b = EdgeCluster::from_chain(&PixelChain { points: b_pixels, closed: false }, 2.0).unwrap();
        let params = CoAssociation { slope_gate: PI, ..CoAssociation::default() };
        assert_eq!(co_associate(&[a, b], &params).len(), 2);
    }

    #[test]
    fn co_association_never_grows() {
        let clusters = vec![
            arc_cluster(60.0, 60.0, 40.0, 0.0, 1.0),
            arc_cluster(60.0, 60.0, 40.0, 1.08, 2.0),
            arc_cluster(60.0, 60.0, 40.0, 2.08, 3.0),
            arc_cluster(160.0, 60.0, 20.0, 0.0, 2.0),
        ];
        let out = co_associate(&clusters, &CoAssociation::default());
        assert!(out.len() <= clusters.len());
        assert_eq!(out.len(), 2);
    }
}
