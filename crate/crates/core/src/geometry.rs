//! Planar geometry: points, rigid motions, collinearity and point-set alignment.
//!
//! Everything here is a pure value type or a pure function. Angles are in
//! radians in the mathematical convention (counter-clockwise from +x) unless a
//! function says otherwise.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default scale-normalized area threshold below which a triangle counts as collinear.
pub const DEFAULT_COLLINEAR_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians counter-clockwise from +x.
    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (*self - other).norm()
    }

    pub fn dot(&self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(&self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    /// Angle of the vector counter-clockwise from +x, in (-pi, pi].
    pub fn angle(&self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Reflection across the x-axis.
    pub fn mirrored(&self) -> Self {
        Self::new(self.x, -self.y)
    }

    pub fn centroid<'a, I>(points: I) -> Option<Point2>
    where
        I: IntoIterator<Item = &'a Point2>,
    {
        let mut sum = Point2::ORIGIN;
        let mut n = 0usize;
        for p in points {
            sum += *p;
            n += 1;
        }
        (n > 0).then(|| sum * (1.0 / n as f64))
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl SubAssign for Point2 {
    fn sub_assign(&mut self, rhs: Point2) {
        self.x -= rhs.x;
        self.y -= rhs.y;
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A 2D line segment, used for walls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point2,
    pub end: Point2,
}

impl Segment {
    pub const fn new(start: Point2, end: Point2) -> Self {
        Self { start, end }
    }

    /// Proper or touching intersection test between two closed segments.
    pub fn intersects(&self, other: &Segment) -> bool {
        let (p, r) = (self.start, self.end - self.start);
        let (q, s) = (other.start, other.end - other.start);
        let denom = r.cross(s);
        let qp = q - p;
        if denom.abs() < 1e-12 {
            // Parallel. Only collinear overlap counts.
            if qp.cross(r).abs() > 1e-12 {
                return false;
            }
            let rr = r.dot(r);
            if rr < 1e-24 {
                return qp.norm() < 1e-12;
            }
            let t0 = qp.dot(r) / rr;
            let t1 = t0 + s.dot(r) / rr;
            let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            return hi >= 0.0 && lo <= 1.0;
        }
        let t = qp.cross(s) / denom;
        let u = qp.cross(r) / denom;
        (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }
}

/// Reflect (optional, across x), rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation_angle: f64,
    pub translation: Point2,
    pub flipped: bool,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation_angle: 0.0,
        translation: Point2::ORIGIN,
        flipped: false,
    };

    pub fn new(rotation_angle: f64, translation: Point2, flipped: bool) -> Self {
        Self {
            rotation_angle,
            translation,
            flipped,
        }
    }

    /// Linear part only (reflection and rotation).
    pub fn apply_linear(&self, p: Point2) -> Point2 {
        let p = if self.flipped { p.mirrored() } else { p };
        p.rotated(self.rotation_angle)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.apply_linear(p) + self.translation
    }

    pub fn inverse(&self) -> RigidTransform {
        // M = R(a) F^f, so M^-1 = F^f R(-a), and F R(-a) = R(a) F.
        let angle = if self.flipped {
            self.rotation_angle
        } else {
            -self.rotation_angle
        };
        let linear_inv = RigidTransform::new(angle, Point2::ORIGIN, self.flipped);
        let translation = -linear_inv.apply_linear(self.translation);
        RigidTransform::new(normalize_angle_signed(angle), translation, self.flipped)
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(&self, other: &RigidTransform) -> RigidTransform {
        let angle = if other.flipped {
            other.rotation_angle - self.rotation_angle
        } else {
            other.rotation_angle + self.rotation_angle
        };
        RigidTransform::new(
            normalize_angle_signed(angle),
            other.apply(self.translation),
            self.flipped ^ other.flipped,
        )
    }
}

pub fn apply_transform(t: &RigidTransform, p: Point2) -> Point2 {
    t.apply(p)
}

/// Wrap an angle to [0, 2pi).
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap an angle to (-pi, pi].
pub fn normalize_angle_signed(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest absolute difference between two angles.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle_signed(a - b).abs()
}

/// Circular mean of angles; `None` if empty or the resultant vanishes.
pub fn circular_mean(angles: &[f64]) -> Option<f64> {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    if angles.is_empty() || s.hypot(c) < 1e-12 {
        return None;
    }
    Some(s.atan2(c))
}

/// True iff twice the triangle area over the squared longest side is below `tol`.
///
/// Coincident points are collinear by definition.
pub fn are_collinear(a: Point2, b: Point2, c: Point2, tol: f64) -> bool {
    let longest = (a - b)
        .norm_squared()
        .max((b - c).norm_squared())
        .max((c - a).norm_squared());
    if longest < 1e-24 {
        return true;
    }
    let twice_area = (b - a).cross(c - a).abs();
    twice_area / longest < tol
}

/// Closed-form least-squares rigid alignment of `source` onto `target`.
///
/// Returns the transform and the resulting RMSE. With `allow_flip`, the
/// reflected solution is also evaluated and the better one kept.
pub fn procrustes_align(
    source: &[Point2],
    target: &[Point2],
    allow_flip: bool,
) -> Result<(RigidTransform, f64)> {
    weighted_procrustes_align(source, target, None, allow_flip)
}

/// Weighted variant of [`procrustes_align`]. RMSE is weighted the same way.
pub fn weighted_procrustes_align(
    source: &[Point2],
    target: &[Point2],
    weights: Option<&[f64]>,
    allow_flip: bool,
) -> Result<(RigidTransform, f64)> {
    if source.len() != target.len() {
        return Err(Error::InvalidArgument(format!(
            "procrustes: {} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 2 {
        return Err(Error::InvalidArgument(
            "procrustes needs at least two point pairs".into(),
        ));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == source.len() => w.to_vec(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "procrustes: weight count mismatch".into(),
            ))
        }
        None => vec![1.0; source.len()],
    };
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::InvalidArgument("procrustes: zero total weight".into()));
    }
    let weighted_centroid = |pts: &[Point2]| {
        pts.iter()
            .zip(&w)
            .fold(Point2::ORIGIN, |acc, (p, wi)| acc + *p * *wi)
            * (1.0 / wsum)
    };

    let cs = weighted_centroid(source);
    let spread: f64 = source
        .iter()
        .zip(&w)
        .map(|(p, wi)| wi * (*p - cs).norm_squared())
        .sum();
    if spread < 1e-24 {
        return Err(Error::Degenerate(
            "procrustes: all source points coincide".into(),
        ));
    }

    let solve = |flipped: bool| {
        let src: Vec<Point2> = source
            .iter()
            .map(|p| if flipped { p.mirrored() } else { *p })
            .collect();
        let cs = weighted_centroid(&src);
        let ct = weighted_centroid(target);
        let (mut sdot, mut scross) = (0.0, 0.0);
        for ((s, t), wi) in src.iter().zip(target).zip(&w) {
            let (s, t) = (*s - cs, *t - ct);
            sdot += wi * s.dot(t);
            scross += wi * s.cross(t);
        }
        let angle = scross.atan2(sdot);
        let translation = ct - cs.rotated(angle);
        let t = RigidTransform::new(angle, translation, flipped);
        let sse: f64 = source
            .iter()
            .zip(target)
            .zip(&w)
            .map(|((s, tg), wi)| wi * (t.apply(*s) - *tg).norm_squared())
            .sum();
        (t, (sse / wsum).sqrt())
    };

    let direct = solve(false);
    if !allow_flip {
        return Ok(direct);
    }
    let mirrored = solve(true);
    Ok(if mirrored.1 < direct.1 { mirrored } else { direct })
}

/// Result of intersecting two circles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircleIntersection {
    /// Two solutions, the first on the left of the c1 -> c2 direction.
    Two(Point2, Point2),
    /// Circles do not meet (or are concentric). Carries the point on the
    /// center line midway between the two circles' closest approach.
    Disjoint(Point2),
}

pub fn circle_intersections(c1: Point2, r1: f64, c2: Point2, r2: f64) -> CircleIntersection {
    let delta = c2 - c1;
    let d = delta.norm();
    if d < 1e-12 {
        return CircleIntersection::Disjoint(c1);
    }
    let u = delta * (1.0 / d);
    if d > r1 + r2 || d < (r1 - r2).abs() {
        // Closest approach points on each circle along the center line.
        let p1 = if d > r1 + r2 { c1 + u * r1 } else if r1 > r2 { c1 + u * r1 } else { c1 - u * r1 };
        let p2 = if d > r1 + r2 { c2 - u * r2 } else if r1 > r2 { c2 + u * r2 } else { c2 - u * r2 };
        return CircleIntersection::Disjoint((p1 + p2) * 0.5);
    }
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h = (r1 * r1 - a * a).max(0.0).sqrt();
    let base = c1 + u * a;
    let perp = Point2::new(-u.y, u.x);
    CircleIntersection::Two(base + perp * h, base - perp * h)
}

/// Place a triangle from its three side lengths: `a` at the origin, `b` on
/// +x, `c` in the upper half-plane.
pub fn place_triangle(d_ab: f64, d_ac: f64, d_bc: f64) -> [Point2; 3] {
    let x = (d_ab * d_ab + d_ac * d_ac - d_bc * d_bc) / (2.0 * d_ab);
    let y = (d_ac * d_ac - x * x).max(0.0).sqrt();
    [Point2::ORIGIN, Point2::new(d_ab, 0.0), Point2::new(x, y)]
}

/// Least-squares position from >= 3 (anchor, range) pairs.
///
/// Linearized solve against the first anchor, then a few Gauss-Newton steps
/// on the range residuals. Returns the point and the RMS range residual.
pub fn trilaterate(anchors: &[(Point2, f64)]) -> Result<(Point2, f64)> {
    if anchors.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "trilateration needs 3 anchors, got {}",
            anchors.len()
        )));
    }
    let (p0, r0) = anchors[0];
    let (mut ata, mut atb) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
    for &(p, r) in &anchors[1..] {
        let row = [2.0 * (p.x - p0.x), 2.0 * (p.y - p0.y)];
        let rhs = r0 * r0 - r * r + p.norm_squared() - p0.norm_squared();
        for i in 0..2 {
            for j in 0..2 {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * rhs;
        }
    }
    let det = ata[0][0] * ata[1][1] - ata[0][1] * ata[1][0];
    let scale = ata[0][0].abs().max(ata[1][1].abs()).max(1e-300);
    if det.abs() < 1e-12 * scale * scale {
        return Err(Error::Degenerate("trilateration anchors are collinear".into()));
    }
    let mut est = Point2::new(
        (ata[1][1] * atb[0] - ata[0][1] * atb[1]) / det,
        (ata[0][0] * atb[1] - ata[1][0] * atb[0]) / det,
    );

    for _ in 0..10 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for &(p, r) in anchors {
            let diff = est - p;
            let dist = diff.norm().max(1e-9);
            let g = [diff.x / dist, diff.y / dist];
            let res = dist - r;
            for i in 0..2 {
                for j in 0..2 {
                    jtj[i][j] += g[i] * g[j];
                }
                jtr[i] += g[i] * res;
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-15 {
            break;
        }
        let step = Point2::new(
            (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det,
            (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det,
        );
        est -= step;
        if step.norm() < 1e-13 {
            break;
        }
    }
    let rms = (anchors
        .iter()
        .map(|&(p, r)| (est.distance(p) - r).powi(2))
        .sum::<f64>()
        / anchors.len() as f64)
        .sqrt();
    Ok((est, rms))
}
