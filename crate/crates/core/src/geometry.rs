//! Planar primitives: points, ellipses, general conics and the direct
//! least-squares ellipse fit.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_pi, Real};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn from_pixel(x: usize, y: usize) -> Self {
        Self::new(T::of_usize(x), T::of_usize(y))
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    pub fn angle(self) -> T {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn rotate_about(self, pivot: Self, theta: T) -> Self {
        (self - pivot).rotate(theta) + pivot
    }

    /// Nearest pixel, or `None` when outside `[0, w) x [0, h)`.
    pub fn to_pixel(self, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = self.x.round();
        let y = self.y.round();
        if x < T::zero() || y < T::zero() {
            return None;
        }
        let (x, y) = (x.to_usize()?, y.to_usize()?);
        (x < width && y < height).then_some((x, y))
    }

    pub fn cast<U: Real>(self) -> Point2<U> {
        Point2::new(U::of(self.x.as_f64()), U::of(self.y.as_f64()))
    }
}

impl<T: Real> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance<T: Real>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> T {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == T::zero() {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.distance(a + ab * t)
}

/// Ellipse with center, semi-axes `a >= b > 0` and orientation `phi` in `[0, π)`
/// measured from the x axis to the major axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseModel<T> {
    pub center: Point2<T>,
    pub a: T,
    pub b: T,
    pub phi: T,
}

/// General conic `a x² + b xy + c y² + d x + e y + f = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub f: T,
}

impl<T: Real> EllipseModel<T> {
    /// Builds an ellipse, swapping axes if needed so that `a >= b`.
    pub fn new(center: Point2<T>, a: T, b: T, phi: T) -> Result<Self> {
        if !(a > T::zero() && b > T::zero()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("semi-axes must be positive, got {a}, {b}")));
        }
        let (a, b, phi) = if b > a { (b, a, phi + T::FRAC_PI_2()) } else { (a, b, phi) };
        Ok(Self { center, a, b, phi: wrap_pi(phi) })
    }

    pub fn circle(center: Point2<T>, r: T) -> Result<Self> {
        Self::new(center, r, r, T::zero())
    }

    pub fn area(&self) -> T {
        T::PI() * self.a * self.b
    }

    /// Ramanujan's second perimeter approximation.
    pub fn perimeter(&self) -> T {
        let (a, b) = (self.a, self.b);
        let h = ((a - b) / (a + b)).powi(2);
        let three = T::of(3.0);
        T::PI() * (a + b) * (T::one() + three * h / (T::of(10.0) + (T::of(4.0) - three * h).sqrt()))
    }

    pub fn point_at(&self, t: T) -> Point2<T> {
        let (s, c) = t.sin_cos();
        Point2::new(self.a * c, self.b * s).rotate(self.phi) + self.center
    }

    /// Coordinates of `p` in the ellipse frame (major axis along u).
    pub fn to_local(&self, p: Point2<T>) -> Point2<T> {
        (p - self.center).rotate(-self.phi)
    }

    /// Normalized implicit value: negative inside, zero on the contour.
    pub fn implicit(&self, p: Point2<T>) -> T {
        let q = self.to_local(p);
        (q.x / self.a).powi(2) + (q.y / self.b).powi(2) - T::one()
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        self.implicit(p) <= T::zero()
    }

    /// Outward unit normal of the contour at parameter `t`.
    pub fn normal_at_param(&self, t: T) -> Point2<T> {
        let (s, c) = t.sin_cos();
        let n = Point2::new(c / self.a, s / self.b);
        (n * (T::one() / n.norm())).rotate(self.phi)
    }

    /// First-order (Sampson) distance to the contour.
    pub fn sampson_distance(&self, p: Point2<T>) -> T {
        let q = self.to_local(p);
        let a2 = self.a * self.a;
        let b2 = self.b * self.b;
        let f = q.x * q.x / a2 + q.y * q.y / b2 - T::one();
        let two = T::of(2.0);
        let g = Point2::new(two * q.x / a2, two * q.y / b2).norm();
        if g == T::zero() {
            return self.b;
        }
        f.abs() / g
    }

    /// `n` points at uniform parameter steps, starting at the major-axis vertex.
    pub fn polygon(&self, n: usize) -> Vec<Point2<T>> {
        let step = T::of(2.0) * T::PI() / T::of_usize(n);
        (0..n).map(|k| self.point_at(step * T::of_usize(k))).collect()
    }

    /// Contour samples at (approximately) uniform arc-length spacing,
    /// returned as `(point, parameter)` pairs.
    pub fn arc_length_samples(&self, spacing: T) -> Vec<(Point2<T>, T)> {
        let count = (self.perimeter() / spacing).ceil().to_usize().unwrap_or(1).max(8);
        let dense = count * 8;
        let two_pi = T::of(2.0) * T::PI();
        let dt = two_pi / T::of_usize(dense);
        let mut cumulative = Vec::with_capacity(dense + 1);
        cumulative.push(T::zero());
        let mut prev = self.point_at(T::zero());
        for k in 1..=dense {
            let p = self.point_at(dt * T::of_usize(k));
            let last = *cumulative.last().unwrap();
            cumulative.push(last + p.distance(prev));
            prev = p;
        }
        let total = cumulative[dense];
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for k in 0..count {
            let target = total * T::of_usize(k) / T::of_usize(count);
            while j + 1 < dense && cumulative[j + 1] < target {
                j += 1;
            }
            let seg = cumulative[j + 1] - cumulative[j];
            let frac = if seg > T::zero() { (target - cumulative[j]) / seg } else { T::zero() };
            let t = dt * (T::of_usize(j) + frac);
            out.push((self.point_at(t), t));
        }
        out
    }

    /// Distance to the contour by dense sampling (`samples` points).
    pub fn sampled_contour_distance(&self, p: Point2<T>, samples: &[Point2<T>]) -> T {
        let _ = self;
        samples.iter().map(|s| s.distance(p)).fold(T::infinity(), T::min)
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> (Point2<T>, Point2<T>) {
        let (s, c) = self.phi.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        let h = Point2::new(hx, hy);
        (self.center - h, self.center + h)
    }

    /// Contour pixels: samples at sub-pixel spacing rounded and deduplicated,
    /// as offsets relative to `origin`. Consecutive entries are 8-neighbors.
    pub fn contour_offsets(&self, origin: Point2<T>) -> Vec<(i64, i64)> {
        let n = (self.perimeter() * T::of(3.0)).ceil().to_usize().unwrap_or(16).max(16);
        let mut out: Vec<(i64, i64)> = Vec::with_capacity(n);
        for p in self.polygon(n) {
            let d = p - origin;
            let q = (d.x.round().to_i64().unwrap_or(0), d.y.round().to_i64().unwrap_or(0));
            if out.last() != Some(&q) {
                out.push(q);
            }
        }
        if out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        let mut seen = std::collections::HashSet::with_capacity(out.len());
        out.retain(|q| seen.insert(*q));
        out
    }

    pub fn rotated_about(&self, pivot: Point2<T>, theta: T) -> Self {
        Self {
            center: self.center.rotate_about(pivot, theta),
            a: self.a,
            b: self.b,
            phi: wrap_pi(self.phi + theta),
        }
    }

    /// Conic coefficients normalized so that `a + c = 1`.
    pub fn conic(&self) -> Conic<T> {
        let (s, c) = self.phi.sin_cos();
        let a2 = self.a * self.a;
        let b2 = self.b * self.b;
        let two = T::of(2.0);
        let ca = a2 * s * s + b2 * c * c;
        let cb = two * (b2 - a2) * s * c;
        let cc = a2 * c * c + b2 * s * s;
        let (x0, y0) = (self.center.x, self.center.y);
        let cd = -two * ca * x0 - cb * y0;
        let ce = -cb * x0 - two * cc * y0;
        let cf = ca * x0 * x0 + cb * x0 * y0 + cc * y0 * y0 - a2 * b2;
        let k = ca + cc;
        Conic { a: ca / k, b: cb / k, c: cc / k, d: cd / k, e: ce / k, f: cf / k }
    }

    pub fn cast<U: Real>(&self) -> EllipseModel<U> {
        EllipseModel {
            center: self.center.cast(),
            a: U::of(self.a.as_f64()),
            b: U::of(self.b.as_f64()),
            phi: U::of(self.phi.as_f64()),
        }
    }
}

impl<T: Real> Conic<T> {
    pub fn eval(&self, p: Point2<T>) -> T {
        let (x, y) = (p.x, p.y);
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    pub fn gradient(&self, p: Point2<T>) -> Point2<T> {
        let two = T::of(2.0);
        Point2::new(
            two * self.a * p.x + self.b * p.y + self.d,
            self.b * p.x + two * self.c * p.y + self.e,
        )
    }

    pub fn discriminant(&self) -> T {
        self.b * self.b - T::of(4.0) * self.a * self.c
    }

    /// Geometric parameters when the conic is a real ellipse.
    pub fn to_ellipse(&self) -> Option<EllipseModel<T>> {
        let mut k = *self;
        if k.a + k.c < T::zero() {
            k = Conic { a: -k.a, b: -k.b, c: -k.c, d: -k.d, e: -k.e, f: -k.f };
        }
        let two = T::of(2.0);
        let det = T::of(4.0) * k.a * k.c - k.b * k.b;
        if det <= T::zero() {
            return None;
        }
        let x0 = (k.b * k.e - two * k.c * k.d) / det;
        let y0 = (k.b * k.d - two * k.a * k.e) / det;
        let center = Point2::new(x0, y0);
        let f0 = k.eval(center);
        if f0 >= T::zero() {
            return None;
        }
        let mean = (k.a + k.c) / two;
        let rad = (((k.a - k.c) / two).powi(2) + (k.b / two).powi(2)).sqrt();
        let (l_small, l_big) = (mean - rad, mean + rad);
        if l_small <= T::zero() {
            return None;
        }
        let a = (-f0 / l_small).sqrt();
        let b = (-f0 / l_big).sqrt();
        let phi = (-k.b).atan2(k.c - k.a) / two;
        EllipseModel::new(center, a, b, phi).ok()
    }
}

/// Direct least-squares ellipse fit (ellipse-specific constraint
/// `4ac - b² = 1`, numerically stable partitioned form).
pub fn fit_ellipse_direct<T: Real>(points: &[Point2<T>]) -> Result<EllipseModel<T>> {
    if points.len() < 5 {
        return Err(Error::Degenerate("ellipse fit needs at least 5 points"));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x.as_f64(), sy + p.y.as_f64()));
    let (mx, my) = (mx / n, my / n);
    let spread = points
        .iter()
        .map(|p| ((p.x.as_f64() - mx).powi(2) + (p.y.as_f64() - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if spread <= 1e-12 {
        return Err(Error::Degenerate("coincident points"));
    }
    let scale = spread / std::f64::consts::SQRT_2;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let x = (p.x.as_f64() - mx) / scale;
        let y = (p.y.as_f64() - my) / scale;
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(Error::Degenerate("collinear points"))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint block
    let reduced = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let Some(v) = null_vector(&shifted) else { continue };
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            // the admissible eigenvalue is the smallest non-negative one
            if best.as_ref().map_or(true, |(l, _)| lambda.re < *l) {
                best = Some((lambda.re, v));
            }
        }
    }
    let (_, a1) = best.ok_or(Error::Degenerate("no elliptical solution"))?;
    let a2 = t * a1;
    let conic = Conic { a: a1[0], b: a1[1], c: a1[2], d: a2[0], e: a2[1], f: a2[2] };
    let local = conic.to_ellipse().ok_or(Error::Degenerate("fitted conic is not an ellipse"))?;
    EllipseModel::new(
        Point2::new(T::of(local.center.x * scale + mx), T::of(local.center.y * scale + my)),
        T::of(local.a * scale),
        T::of(local.b * scale),
        T::of(local.phi),
    )
}

/// Unit vector spanning the (numerical) null space of a rank-2 3x3 matrix.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let v = candidates.into_iter().max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let len = v.norm();
    (len > 1e-300).then(|| v / len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn p(x: f64, y: f64) -> Point2<f64> {
        Point2::new(x, y)
    }

    #[test]
    fn axes_are_ordered_on_construction() {
        let e = EllipseModel::new(p(0.0, 0.0), 2.0, 5.0, 0.1).unwrap();
        assert_eq!((e.a, e.b), (5.0, 2.0));
        assert!((e.phi - (0.1 + PI / 2.0)).abs() < 1e-12);
        assert!(EllipseModel::new(p(0.0, 0.0), 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn conic_round_trip() {
        let e = EllipseModel::new(p(12.0, -4.0), 9.0, 3.5, 2.3).unwrap();
        let back = e.conic().to_ellipse().unwrap();
        assert!((back.center.x - 12.0).abs() < 1e-9 && (back.center.y + 4.0).abs() < 1e-9);
        assert!((back.a - 9.0).abs() < 1e-9 && (back.b - 3.5).abs() < 1e-9);
        assert!((back.phi - e.phi).abs() < 1e-9);
    }

    #[test]
    fn arc_length_samples_are_evenly_spaced() {
        let e = EllipseModel::new(p(0.0, 0.0), 60.0, 30.0, 0.4).unwrap();
        let s = e.arc_length_samples(1.0);
        let gaps: Vec<f64> = s.windows(2).map(|w| w[0].0.distance(w[1].0)).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(gaps.iter().all(|g| (g - mean).abs() < 0.02));
    }

    #[test]
    fn direct_fit_recovers_exact_ellipse() {
        let e = EllipseModel::new(p(200.0, 150.0), 80.0, 45.0, 0.7).unwrap();
        let pts = e.polygon(50);
        let f = fit_ellipse_direct(&pts).unwrap();
        assert!(f.center.distance(e.center) < 1e-6);
        assert!((f.a - 80.0).abs() < 1e-6 && (f.b - 45.0).abs() < 1e-6);
        assert!((f.phi - 0.7).abs() < 1e-6);
    }

    #[test]
    fn direct_fit_partial_arc() {
        let e = EllipseModel::new(p(50.0, 50.0), 30.0, 20.0, 0.0).unwrap();
        let pts: Vec<_> = (0..40).map(|k| e.point_at(k as f64 * 0.05)).collect();
        let f = fit_ellipse_direct(&pts).unwrap();
        assert!((f.a - 30.0).abs() < 1e-5 && (f.b - 20.0).abs() < 1e-5);
    }

    #[test]
    fn direct_fit_rejects_collinear() {
        let pts: Vec<_> = (0..10).map(|k| p(k as f64, 2.0 * k as f64)).collect();
        assert!(fit_ellipse_direct(&pts).is_err());
    }

    #[test]
    fn sampson_distance_near_contour() {
        let e = EllipseModel::new(p(0.0, 0.0), 50.0, 30.0, 0.0).unwrap();
        assert!((e.sampson_distance(p(52.0, 0.0)) - 2.0).abs() < 0.1);
        assert!((e.sampson_distance(p(0.0, 28.0)) - 2.0).abs() < 0.1);
    }

    #[test]
    fn contour_offsets_are_eight_connected() {
        let e = EllipseModel::new(p(0.0, 0.0), 20.0, 11.0, 0.3).unwrap();
        let c = e.contour_offsets(p(0.0, 0.0));
        for w in c.windows(2) {
            assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }
}
