//! Planar polygonal domains, the obtuse triangle with its longest side on the
//! horizontal axis, angle/cone arithmetic and mirror reflection across edges.
//!
//! Conventions:
//! - Polygons are simple, closed and listed counterclockwise.
//! - Domains are closed: points on the boundary (within [`GEOM_TOL`]) are inside.
//! - Angles live in `(-pi, pi]`. Cone intervals never wrap past `±pi`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for membership and edge-distance comparisons.
pub const GEOM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in point ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon vertices must be listed counterclockwise with positive area (signed area {0})")]
    NotCounterclockwise(f64),
    #[error("polygon edge {0} has zero length")]
    DegenerateEdge(usize),
    #[error("polygon is not simple: edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("angle a = {0} must lie in (-pi/2, 0)")]
    AngleAOutOfRange(f64),
    #[error("angle b = {0} must lie in (0, pi/2)")]
    AngleBOutOfRange(f64),
    #[error("triangle is not obtuse: b - a = {0} >= pi/2")]
    NotObtuse(f64),
    #[error("base length must be positive and finite, got {0}")]
    BadBaseLength(f64),
    #[error("angle undefined for the zero vector")]
    AngleUndefined,
    #[error("invalid cone [{lo}, {hi}]: {reason}")]
    InvalidCone { lo: f64, hi: f64, reason: &'static str },
    #[error("theorem hypothesis violated: {0}")]
    Hypothesis(String),
}

/// A point (or displacement) in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x1: f64,
    pub x2: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x1: 0.0, x2: 0.0 };

    #[inline]
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    /// Checked constructor rejecting NaN and infinities.
    pub fn try_new(x1: f64, x2: f64) -> Result<Self, GeometryError> {
        if x1.is_finite() && x2.is_finite() {
            Ok(Self { x1, x2 })
        } else {
            Err(GeometryError::NonFinite(x1, x2))
        }
    }

    #[inline]
    pub fn dot(self, other: Point2) -> f64 {
        self.x1 * other.x1 + self.x2 * other.x2
    }

    /// z-component of the planar cross product.
    #[inline]
    pub fn cross(self, other: Point2) -> f64 {
        self.x1 * other.x2 - self.x2 * other.x1
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }

    #[inline]
    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl fmt::Display for Point2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x1, self.x2)
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x1 + rhs.x1, self.x2 + rhs.x2)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, rhs: Point2) {
        self.x1 += rhs.x1;
        self.x2 += rhs.x2;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x1 - rhs.x1, self.x2 - rhs.x2)
    }
}

impl Mul<Point2> for f64 {
    type Output = Point2;
    #[inline]
    fn mul(self, rhs: Point2) -> Point2 {
        Point2::new(self * rhs.x1, self * rhs.x2)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x1, -self.x2)
    }
}

/// Planar argument of `v` in `(-pi, pi]`.
pub fn angle_of(v: Point2) -> Result<f64, GeometryError> {
    if v.x1 == 0.0 && v.x2 == 0.0 {
        return Err(GeometryError::AngleUndefined);
    }
    // atan2(-0.0, x<0) returns -pi; fold it onto the closed end.
    let theta = v.x2.atan2(v.x1);
    Ok(if theta <= -PI { PI } else { theta })
}

/// One directed boundary segment with its inward unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub start: Point2,
    pub end: Point2,
    pub inward_normal: Point2,
}

impl Edge {
    fn new(start: Point2, end: Point2) -> Self {
        let d = end - start;
        let len = d.norm();
        // left of the direction of travel is inside for a CCW polygon
        let inward_normal = Point2::new(-d.x2 / len, d.x1 / len);
        Self { start, end, inward_normal }
    }

    /// Signed distance from `p` to the supporting line, positive on the inside.
    #[inline]
    pub fn line_distance(&self, p: Point2) -> f64 {
        self.inward_normal.dot(p - self.start)
    }

    pub fn length(&self) -> f64 {
        self.start.dist(self.end)
    }

    /// Direction angle of the edge as travelled (start to end).
    pub fn direction_angle(&self) -> f64 {
        // edges have nonzero length by construction
        angle_of(self.end - self.start).unwrap_or(0.0)
    }

    /// Euclidean distance from `p` to the closed segment.
    pub fn segment_distance(&self, p: Point2) -> f64 {
        let d = self.end - self.start;
        let t = ((p - self.start).dot(d) / d.dot(d)).clamp(0.0, 1.0);
        p.dist(self.start + t * d)
    }

    /// Mirror image of `p` across the supporting line.
    #[inline]
    pub fn reflect(&self, p: Point2) -> Point2 {
        let s = self.line_distance(p);
        p + (-2.0 * s) * self.inward_normal
    }
}

/// Result of a membership query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Containment {
    pub inside: bool,
    pub nearest_edge: usize,
    /// Distance to the nearest edge, positive inside and negative outside.
    pub signed_distance: f64,
}

impl Containment {
    /// How far the point sits outside the domain (0 when inside).
    pub fn penetration_depth(&self) -> f64 {
        (-self.signed_distance).max(0.0)
    }
}

/// A simple closed polygon listed counterclockwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolygonalDomain {
    vertices: Vec<Point2>,
    edges: Vec<Edge>,
    convex: bool,
}

impl PolygonalDomain {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for v in &vertices {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(v.x1, v.x2));
            }
        }
        for i in 0..n {
            if vertices[i].dist(vertices[(i + 1) % n]) <= GEOM_TOL {
                return Err(GeometryError::DegenerateEdge(i));
            }
        }
        let area = signed_area(&vertices);
        if area <= 0.0 {
            return Err(GeometryError::NotCounterclockwise(area));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (p1, p2) = (vertices[i], vertices[(i + 1) % n]);
                let (q1, q2) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(p1, p2, q1, q2) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        let edges: Vec<Edge> = (0..n).map(|i| Edge::new(vertices[i], vertices[(i + 1) % n])).collect();
        let convex = (0..n).all(|i| {
            let d0 = vertices[(i + 1) % n] - vertices[i];
            let d1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
            d0.cross(d1) >= 0.0
        });
        Ok(Self { vertices, edges, convex })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, p) in self.vertices.iter().enumerate() {
            for q in &self.vertices[i + 1..] {
                d = d.max(p.dist(*q));
            }
        }
        d
    }

    /// Largest absolute coordinate over all vertices.
    pub fn max_abs_coordinate(&self) -> f64 {
        self.vertices.iter().fold(0.0_f64, |m, v| m.max(v.x1.abs()).max(v.x2.abs()))
    }

    /// Membership in the closed domain plus the nearest edge.
    pub fn contains(&self, p: Point2) -> Containment {
        let (nearest_edge, dist) = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.segment_distance(p)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let inside = dist <= GEOM_TOL || self.winding_inside(p);
        Containment {
            inside,
            nearest_edge,
            signed_distance: if inside { dist } else { -dist },
        }
    }

    /// Membership only. Cheaper than [`contains`](Self::contains) for convex domains.
    #[inline]
    pub fn is_inside(&self, p: Point2) -> bool {
        if self.convex {
            self.edges.iter().all(|e| e.line_distance(p) >= -GEOM_TOL)
        } else {
            self.contains(p).inside
        }
    }

    /// Edge to mirror an exterior point across. For convex domains this is the
    /// most violated supporting line; otherwise the nearest edge segment.
    pub fn reflection_edge(&self, p: Point2) -> usize {
        if self.convex {
            let mut best = 0;
            let mut depth = f64::NEG_INFINITY;
            for (i, e) in self.edges.iter().enumerate() {
                let v = -e.line_distance(p);
                if v > depth {
                    depth = v;
                    best = i;
                }
            }
            best
        } else {
            self.contains(p).nearest_edge
        }
    }

    fn winding_inside(&self, p: Point2) -> bool {
        // even-odd crossing test
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (vi, vj) = (self.vertices[i], self.vertices[j]);
            if (vi.x2 > p.x2) != (vj.x2 > p.x2) {
                let x_cross = vj.x1 + (p.x2 - vj.x2) * (vi.x1 - vj.x1) / (vi.x2 - vj.x2);
                if p.x1 < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

fn signed_area(v: &[Point2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum::<f64>()
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on_segment = |a: Point2, b: Point2, c: Point2| {
        c.x1 >= a.x1.min(b.x1) && c.x1 <= a.x1.max(b.x1) && c.x2 >= a.x2.min(b.x2) && c.x2 <= a.x2.max(b.x2)
    };
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Obtuse triangle with its longest side on the horizontal axis.
///
/// The side through the origin makes angle `b` with the axis; the side
/// through `(base_length, 0)` makes angle `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObtuseTriangleSpec {
    pub a: f64,
    pub b: f64,
    pub base_length: f64,
}

impl ObtuseTriangleSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.a > -FRAC_PI_2 && self.a < 0.0) {
            return Err(GeometryError::AngleAOutOfRange(self.a));
        }
        if !(self.b > 0.0 && self.b < FRAC_PI_2) {
            return Err(GeometryError::AngleBOutOfRange(self.b));
        }
        if self.b - self.a >= FRAC_PI_2 {
            return Err(GeometryError::NotObtuse(self.b - self.a));
        }
        if !(self.base_length > 0.0 && self.base_length.is_finite()) {
            return Err(GeometryError::BadBaseLength(self.base_length));
        }
        Ok(())
    }

    /// Apex: the ray from the origin at angle `b` meets the ray from the far
    /// base vertex at angle `pi + a`.
    pub fn apex(&self) -> Point2 {
        // law of sines: the side at angle b has length L sin|a| / sin(apex angle)
        let side = self.base_length * (-self.a).sin() / (self.b - self.a).sin();
        Point2::new(side * self.b.cos(), side * self.b.sin())
    }
}

pub fn build_obtuse_triangle(spec: &ObtuseTriangleSpec) -> Result<PolygonalDomain, GeometryError> {
    spec.validate()?;
    PolygonalDomain::new(vec![Point2::ORIGIN, Point2::new(spec.base_length, 0.0), spec.apex()])
}

/// Closed angular interval `[lo, hi]` inside `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeInterval {
    pub lo: f64,
    pub hi: f64,
}

impl ConeInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, GeometryError> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(GeometryError::InvalidCone { lo, hi, reason: "non-finite bound" });
        }
        if lo > hi {
            return Err(GeometryError::InvalidCone { lo, hi, reason: "lo > hi" });
        }
        if hi - lo >= 2.0 * PI {
            return Err(GeometryError::InvalidCone { lo, hi, reason: "width must be below 2 pi" });
        }
        if lo <= -PI || hi > PI {
            return Err(GeometryError::InvalidCone { lo, hi, reason: "interval wraps past ±pi" });
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.lo && theta <= self.hi
    }

    /// Distance of `theta` outside `[lo - slack, hi + slack]`, zero inside.
    pub fn excursion(&self, theta: f64, slack: f64) -> f64 {
        (self.lo - slack - theta).max(theta - self.hi - slack).max(0.0)
    }
}

/// Gradient cone and admissible line-direction cone for angles `a, b` of the
/// triangle and an initial gradient cone `(c, d)`.
pub fn theorem_cones(a: f64, b: f64, c: f64, d: f64) -> Result<(ConeInterval, ConeInterval), GeometryError> {
    if !(a > -FRAC_PI_2 && a < 0.0) {
        return Err(GeometryError::AngleAOutOfRange(a));
    }
    if !(b > 0.0 && b < FRAC_PI_2) {
        return Err(GeometryError::AngleBOutOfRange(b));
    }
    if !(c > b - FRAC_PI_2) {
        return Err(GeometryError::Hypothesis(format!("c > b - pi/2 fails: c = {c}, b - pi/2 = {}", b - FRAC_PI_2)));
    }
    if !(d < FRAC_PI_2 + a) {
        return Err(GeometryError::Hypothesis(format!("d < pi/2 + a fails: d = {d}, pi/2 + a = {}", FRAC_PI_2 + a)));
    }
    if !(c <= d) {
        return Err(GeometryError::Hypothesis(format!("c <= d fails: c = {c}, d = {d}")));
    }
    let lo = a.min(c);
    let hi = b.max(d);
    let gradient = ConeInterval::new(lo, hi)?;
    let line = ConeInterval::new(hi - FRAC_PI_2, lo + FRAC_PI_2)?;
    Ok((gradient, line))
}
