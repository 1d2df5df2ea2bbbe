//! Reflected Brownian motion in polygonal domains and the synchronous coupling
//! of two copies driven by the same increments.
//!
//! Simulations use projected Euler steps: an exterior candidate
//! `pos + increment` is moved to the nearest boundary point. The per-step
//! mirror [`step_rbm`] is kept alongside; it rotates `z - w` across the wall
//! direction when both copies cross one wall on the same step, which the
//! continuous coupling never does. The half-plane running-minimum construction
//! [`skorokhod_reflect`] serves as an oracle for both schemes.
//!
//! Coupled positions live on a dyadic lattice of spacing `2^-44`. Sums and
//! differences of lattice values below `2^8` in magnitude are exact in `f64`,
//! so an interior step leaves `z - w` bitwise unchanged.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_of, ConeInterval, Point2, PolygonalDomain};
use crate::rng::RngStream;

/// Cap on mirror iterations per step.
pub const MAX_REFLECTIONS: usize = 8;

const LATTICE_SCALE: f64 = 17_592_186_044_416.0; // 2^44

/// Domains must fit in `[-64, 64]^2` for lattice arithmetic to stay exact.
pub const MAX_LATTICE_COORD: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("empty path")]
    EmptyPath,
    #[error("path must start at a nonnegative value, got {0}")]
    NegativeStart(f64),
    #[error("reflection did not re-enter the domain after {MAX_REFLECTIONS} mirrors (from {pos} with increment {increment}); time step too large")]
    ReflectionDiverged { pos: Point2, increment: Point2 },
    #[error("starting point {0} is outside the domain")]
    StartOutside(Point2),
    #[error("coupled starting points coincide at {0}")]
    CoincidentStart(Point2),
    #[error("time step must be positive and t_end nonnegative (dt = {dt}, t_end = {t_end})")]
    BadTimeGrid { dt: f64, t_end: f64 },
    #[error("domain coordinates exceed {MAX_LATTICE_COORD} in magnitude")]
    DomainTooLarge,
}

/// Round to the simulation lattice.
#[inline]
pub fn snap(p: Point2) -> Point2 {
    Point2::new((p.x1 * LATTICE_SCALE).round() / LATTICE_SCALE, (p.x2 * LATTICE_SCALE).round() / LATTICE_SCALE)
}

/// Number of steps covering `[0, t_end]` with step `dt`.
pub fn step_count(dt: f64, t_end: f64) -> Result<usize, MotionError> {
    if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
        return Err(MotionError::BadTimeGrid { dt, t_end });
    }
    Ok((t_end / dt).round() as usize)
}

pub(crate) fn check_lattice_domain(domain: &PolygonalDomain) -> Result<(), MotionError> {
    if domain.max_abs_coordinate() > MAX_LATTICE_COORD {
        Err(MotionError::DomainTooLarge)
    } else {
        Ok(())
    }
}

/// Running-minimum reflection of a one-dimensional path at 0:
/// `out[k] = raw[k] - min(0, min_{j<=k} raw[j])`.
pub fn skorokhod_reflect(raw: &[f64]) -> Result<Vec<f64>, MotionError> {
    let first = *raw.first().ok_or(MotionError::EmptyPath)?;
    if first < 0.0 {
        return Err(MotionError::NegativeStart(first));
    }
    let mut running_min = f64::INFINITY;
    Ok(raw
        .iter()
        .map(|&r| {
            running_min = running_min.min(r);
            r - running_min.min(0.0)
        })
        .collect())
}

/// One Euler step with mirror reflection. Returns the new position and the
/// first edge mirrored across, if any.
pub fn step_rbm(
    domain: &PolygonalDomain,
    pos: Point2,
    increment: Point2,
) -> Result<(Point2, Option<usize>), MotionError> {
    let mut candidate = pos + increment;
    let mut first_edge = None;
    for _ in 0..MAX_REFLECTIONS {
        if domain.is_inside(candidate) {
            return Ok((candidate, first_edge));
        }
        let edge = domain.reflection_edge(candidate);
        first_edge.get_or_insert(edge);
        candidate = domain.edges()[edge].reflect(candidate);
    }
    if domain.is_inside(candidate) {
        Ok((candidate, first_edge))
    } else {
        Err(MotionError::ReflectionDiverged { pos, increment })
    }
}

/// Nearest point of the boundary to `p`, the edge it lies on, and whether it
/// is a vertex.
fn nearest_boundary_point(domain: &PolygonalDomain, p: Point2) -> (Point2, usize, bool) {
    let mut best = (p, 0, false);
    let mut best_dist = f64::INFINITY;
    for (i, e) in domain.edges().iter().enumerate() {
        let d = e.end - e.start;
        let t = (p - e.start).dot(d) / d.dot(d);
        let (q, vertex) = if t <= 0.0 {
            (e.start, true)
        } else if t >= 1.0 {
            (e.end, true)
        } else {
            (Point2::new(e.start.x1 + t * d.x1, e.start.x2 + t * d.x2), false)
        };
        let dist = p.dist(q);
        if dist < best_dist {
            best_dist = dist;
            best = (q, i, vertex);
        }
    }
    best
}

/// Outcome of a projected step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedStep {
    pub pos: Point2,
    /// Edge the candidate was projected onto, if it left the domain.
    pub edge: Option<usize>,
    /// True if the projection landed on a vertex.
    pub at_vertex: bool,
}

/// One Euler step with projection: an exterior candidate `pos + increment` is
/// replaced by the nearest boundary point, rounded to the lattice. On a
/// half-plane this is the running-minimum construction of
/// [`skorokhod_reflect`] applied to the discrete path.
pub fn step_projected(domain: &PolygonalDomain, pos: Point2, increment: Point2) -> ProjectedStep {
    let candidate = pos + increment;
    if domain.is_inside(candidate) {
        // lattice sums are already exact
        return ProjectedStep { pos: candidate, edge: None, at_vertex: false };
    }
    let (q, edge, at_vertex) = nearest_boundary_point(domain, candidate);
    ProjectedStep { pos: snap(q), edge: Some(edge), at_vertex }
}

/// Depth cap on Brownian-bridge refinement of a coupled step.
pub const MAX_BRIDGE_DEPTH: u32 = 24;

/// Cap on bisections per coupled step.
pub const MAX_BRIDGE_SPLITS: u32 = 256;

/// Below this separation the pair is advanced through the derivative of the
/// projection instead of by differencing two projected positions.
pub const LINEAR_SEPARATION: f64 = 9.313_225_746_154_785e-10; // 2^-30

/// Linear-regime differences shorter than this are rescaled by
/// [`RENORMALIZE_FACTOR`] to stay clear of underflow. The copies then coincide
/// at every representable resolution and only the direction of `d` matters.
pub const RENORMALIZE_BELOW: f64 = 2.409_919_865_102_884e-181; // 2^-600
pub const RENORMALIZE_FACTOR: f64 = 3.273_390_607_896_142e150; // 2^500

/// Two synchronously coupled positions and their difference `d = z - w`.
///
/// Coupled copies contract near acute corners, far below lattice resolution.
/// Once `|d| < LINEAR_SEPARATION` the difference is carried on its own in full
/// relative precision and `z` is only its rounded image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledPoint {
    pub w: Point2,
    pub z: Point2,
    pub d: Point2,
}

impl CoupledPoint {
    /// Both positions snapped to the lattice.
    pub fn new(w: Point2, z: Point2) -> Self {
        let (w, z) = (snap(w), snap(z));
        Self { w, z, d: z - w }
    }

    fn from_base(domain: &PolygonalDomain, w: Point2, d: Point2) -> Self {
        let z = w + d;
        // rounding can leave w + d outside when w sits on the boundary
        Self { w, z: if domain.is_inside(z) { z } else { w }, d }
    }
}

/// Result of one coupled step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CoupledStep {
    pub pair: CoupledPoint,
    pub w_edge: Option<usize>,
    pub z_edge: Option<usize>,
}

/// One synchronous step of a coupled pair over a time span `h`.
///
/// Projecting both copies onto one edge, or one copy alone, moves `d` toward
/// that edge's direction. The remaining cases (a vertex projection, the copies
/// projected onto different edges, or the copies landing on one point) are
/// refined: the increment is split at a Brownian-bridge midpoint and each half
/// is stepped in turn. Both copies see the same sub-increments, so steps
/// without projection leave `d` bitwise unchanged.
pub(crate) fn step_coupled<R: Rng + ?Sized>(
    domain: &PolygonalDomain,
    pair: CoupledPoint,
    increment: Point2,
    h: f64,
    rng: &mut R,
) -> CoupledStep {
    let mut budget = MAX_BRIDGE_SPLITS;
    step_coupled_at(domain, pair, increment, h, rng, 0, &mut budget)
}

/// `d` projected onto the direction of `edge`, the derivative of the
/// projection at a point of that edge. At a vertex the edge the candidate was
/// projected through stands in for the zero derivative, since the continuous
/// motion never reaches a corner.
fn tangential(domain: &PolygonalDomain, edge: usize, d: Point2) -> Point2 {
    let e = &domain.edges()[edge];
    let t = e.end - e.start;
    let s = d.dot(t) / t.dot(t);
    Point2::new(s * t.x1, s * t.x2)
}

fn coarse_coupled_step(domain: &PolygonalDomain, pair: CoupledPoint, increment: Point2) -> (CoupledStep, bool) {
    let sw = step_projected(domain, pair.w, increment);
    if pair.d.norm() >= LINEAR_SEPARATION {
        let sz = step_projected(domain, pair.z, increment);
        let split_edges = matches!((sw.edge, sz.edge), (Some(a), Some(b)) if a != b);
        if sw.pos == sz.pos {
            // merged at a vertex: carry the difference through the derivative
            let d = sw.edge.or(sz.edge).map_or(pair.d, |e| tangential(domain, e, pair.d));
            let step = CoupledStep { pair: CoupledPoint::from_base(domain, sw.pos, d), w_edge: sw.edge, z_edge: sz.edge };
            return (step, true);
        }
        let awkward = sw.at_vertex || sz.at_vertex || split_edges;
        let pair = CoupledPoint { w: sw.pos, z: sz.pos, d: sz.pos - sw.pos };
        return (CoupledStep { pair, w_edge: sw.edge, z_edge: sz.edge }, awkward);
    }
    let mut d = sw.edge.map_or(pair.d, |e| tangential(domain, e, pair.d));
    if d.norm() < RENORMALIZE_BELOW {
        d = Point2::new(d.x1 * RENORMALIZE_FACTOR, d.x2 * RENORMALIZE_FACTOR);
    }
    let step = CoupledStep { pair: CoupledPoint::from_base(domain, sw.pos, d), w_edge: sw.edge, z_edge: sw.edge };
    (step, sw.at_vertex)
}

fn step_coupled_at<R: Rng + ?Sized>(
    domain: &PolygonalDomain,
    pair: CoupledPoint,
    increment: Point2,
    h: f64,
    rng: &mut R,
    depth: u32,
    budget: &mut u32,
) -> CoupledStep {
    let (coarse, awkward) = coarse_coupled_step(domain, pair, increment);
    if !awkward || depth >= MAX_BRIDGE_DEPTH || *budget == 0 {
        return coarse;
    }
    *budget -= 1;
    let sd = 0.5 * h.sqrt();
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let mid = snap(Point2::new(0.5 * increment.x1 + sd * g1, 0.5 * increment.x2 + sd * g2));
    let first = step_coupled_at(domain, pair, mid, 0.5 * h, rng, depth + 1, budget);
    let second = step_coupled_at(domain, first.pair, increment - mid, 0.5 * h, rng, depth + 1, budget);
    CoupledStep { pair: second.pair, w_edge: first.w_edge.or(second.w_edge), z_edge: first.z_edge.or(second.z_edge) }
}

/// Gaussian increment with variance `dt` per coordinate, on the lattice.
#[inline]
pub(crate) fn gaussian_increment<R: Rng + ?Sized>(rng: &mut R, sqrt_dt: f64) -> Point2 {
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    snap(Point2::new(sqrt_dt * g1, sqrt_dt * g2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbmPath {
    pub dt: f64,
    pub positions: Vec<Point2>,
    /// Entry `k` is the first edge mirrored on the step ending at position `k`.
    /// Entry 0 is always `None`.
    pub reflected_edge: Vec<Option<usize>>,
}

impl RbmPath {
    fn with_start(dt: f64, start: Point2, capacity: usize) -> Self {
        let mut positions = Vec::with_capacity(capacity);
        let mut reflected_edge = Vec::with_capacity(capacity);
        positions.push(start);
        reflected_edge.push(None);
        Self { dt, positions, reflected_edge }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Two reflected motions driven by the same increments. `w` is the copy
/// started at the point with the smaller first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledPath {
    pub dt: f64,
    pub w_path: RbmPath,
    pub z_path: RbmPath,
    /// Tracked difference `z - w`; see [`CoupledPoint`].
    pub difference: Vec<Point2>,
    pub k_angle: Vec<f64>,
    /// True iff neither copy reflected on the step ending at this index.
    pub interior_step: Vec<bool>,
}

impl CoupledPath {
    pub fn len(&self) -> usize {
        self.k_angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_angle.is_empty()
    }

    /// Fraction of steps on which at least one copy reflected.
    pub fn reflection_fraction(&self) -> f64 {
        let steps = self.len().saturating_sub(1);
        if steps == 0 {
            return 0.0;
        }
        self.interior_step[1..].iter().filter(|&&i| !i).count() as f64 / steps as f64
    }

    /// CSV trace: `step,t,w1,w2,z1,z2,K_angle,interior`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,t,w1,w2,z1,z2,K_angle,interior")?;
        for k in 0..self.len() {
            let (w, z) = (self.w_path.positions[k], self.z_path.positions[k]);
            writeln!(
                out,
                "{k},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                k as f64 * self.dt,
                w.x1,
                w.x2,
                z.x1,
                z.x2,
                self.k_angle[k],
                self.interior_step[k]
            )?;
        }
        Ok(())
    }
}

pub fn simulate_coupled_pair(
    domain: &PolygonalDomain,
    x: Point2,
    y: Point2,
    dt: f64,
    t_end: f64,
    stream: &RngStream,
) -> Result<CoupledPath, MotionError> {
    let steps = step_count(dt, t_end)?;
    check_lattice_domain(domain)?;
    let (x, y) = (snap(x), snap(y));
    for p in [x, y] {
        if !domain.is_inside(p) {
            return Err(MotionError::StartOutside(p));
        }
    }
    if x == y {
        return Err(MotionError::CoincidentStart(x));
    }
    let (w0, z0) = if y.x1 < x.x1 { (y, x) } else { (x, y) };

    let mut rng = stream.rng();
    let sqrt_dt = dt.sqrt();
    let mut w_path = RbmPath::with_start(dt, w0, steps + 1);
    let mut z_path = RbmPath::with_start(dt, z0, steps + 1);
    let mut difference = Vec::with_capacity(steps + 1);
    let mut k_angle = Vec::with_capacity(steps + 1);
    let mut interior_step = Vec::with_capacity(steps + 1);
    difference.push(z0 - w0);
    k_angle.push(angle_of(z0 - w0).expect("distinct starting points"));
    interior_step.push(true);

    let mut pair = CoupledPoint::new(w0, z0);
    for _ in 0..steps {
        let inc = gaussian_increment(&mut rng, sqrt_dt);
        let CoupledStep { pair: next, w_edge, z_edge } = step_coupled(domain, pair, inc, dt, &mut rng);
        pair = next;
        w_path.positions.push(pair.w);
        w_path.reflected_edge.push(w_edge);
        z_path.positions.push(pair.z);
        z_path.reflected_edge.push(z_edge);
        difference.push(pair.d);
        // the copies can still merge at a vertex past the refinement caps; the
        // monitors report it and the angle is carried over
        let theta = angle_of(pair.d).unwrap_or_else(|_| *k_angle.last().unwrap());
        k_angle.push(theta);
        interior_step.push(w_edge.is_none() && z_edge.is_none());
    }
    Ok(CoupledPath { dt, w_path, z_path, difference, k_angle, interior_step })
}

/// Simulate `replicates` independent coupled pairs, replicate `k` on stream `k`.
/// Output order is replicate order regardless of the thread pool.
pub fn simulate_coupled_batch(
    domain: &PolygonalDomain,
    x: Point2,
    y: Point2,
    dt: f64,
    t_end: f64,
    seed: u64,
    replicates: usize,
) -> Result<Vec<CoupledPath>, MotionError> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|k| simulate_coupled_pair(domain, x, y, dt, t_end, &RngStream::new(seed, k)))
        .collect()
}

/// Slack on the line-angle monitor for step `dt`.
pub fn angle_slack(dt: f64) -> f64 {
    4.0 * dt.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub steps: usize,
    /// `w1 < z1` strictly at every recorded step, read off the tracked difference.
    pub ordering_ok: bool,
    pub first_ordering_violation: Option<usize>,
    /// Every line angle within the cone widened by `angle_slack`.
    pub angle_ok: bool,
    pub angle_slack: f64,
    /// Largest distance of a line angle outside the (unwidened) cone.
    pub max_excursion: f64,
    pub never_collide: bool,
    pub min_separation: f64,
    /// `z - w` bitwise unchanged across every interior step.
    pub interior_translation_exact: bool,
    pub reflection_fraction: f64,
}

pub fn coupling_monitors(path: &CoupledPath, line_cone: &ConeInterval) -> CouplingReport {
    let slack = angle_slack(path.dt);
    let d = &path.difference;

    let first_ordering_violation = (0..path.len()).find(|&k| !(d[k].x1 > 0.0));
    let max_excursion = path.k_angle.iter().map(|&t| line_cone.excursion(t, 0.0)).fold(0.0, f64::max);
    let angle_ok = path.k_angle.iter().all(|&t| line_cone.excursion(t, slack) == 0.0);
    let min_separation = d.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    let interior_translation_exact = (1..path.len()).filter(|&k| path.interior_step[k]).all(|k| d[k] == d[k - 1]);

    CouplingReport {
        steps: path.len().saturating_sub(1),
        ordering_ok: first_ordering_violation.is_none(),
        first_ordering_violation,
        angle_ok,
        angle_slack: slack,
        max_excursion,
        never_collide: min_separation > 0.0,
        min_separation,
        interior_translation_exact,
        reflection_fraction: path.reflection_fraction(),
    }
}

/// Aggregate over a batch of coupled paths, in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchCouplingReport {
    pub replicates: usize,
    pub dt: f64,
    pub ordering_ok: bool,
    pub angle_ok: bool,
    pub never_collide: bool,
    pub interior_translation_exact: bool,
    pub max_excursion: f64,
    pub min_separation: f64,
    pub mean_reflection_fraction: f64,
    pub failing_replicates: Vec<usize>,
    pub pass: bool,
}

impl BatchCouplingReport {
    pub fn from_reports(dt: f64, reports: &[CouplingReport]) -> Self {
        let failing_replicates: Vec<usize> = reports
            .iter()
            .enumerate()
            .filter(|(_, r)| !(r.ordering_ok && r.angle_ok && r.never_collide && r.interior_translation_exact))
            .map(|(k, _)| k)
            .collect();
        let n = reports.len();
        let ordering_ok = reports.iter().all(|r| r.ordering_ok);
        let angle_ok = reports.iter().all(|r| r.angle_ok);
        let never_collide = reports.iter().all(|r| r.never_collide);
        let interior_translation_exact = reports.iter().all(|r| r.interior_translation_exact);
        Self {
            replicates: n,
            dt,
            ordering_ok,
            angle_ok,
            never_collide,
            interior_translation_exact,
            max_excursion: reports.iter().map(|r| r.max_excursion).fold(0.0, f64::max),
            min_separation: reports.iter().map(|r| r.min_separation).fold(f64::INFINITY, f64::min),
            mean_reflection_fraction: if n == 0 {
                0.0
            } else {
                reports.iter().map(|r| r.reflection_fraction).sum::<f64>() / n as f64
            },
            pass: failing_replicates.is_empty(),
            failing_replicates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_obtuse_triangle, theorem_cones, ObtuseTriangleSpec};
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_6};

    fn example_triangle() -> PolygonalDomain {
        build_obtuse_triangle(&ObtuseTriangleSpec { a: -FRAC_PI_6, b: FRAC_PI_6, base_length: 1.0 }).unwrap()
    }

    fn line_cone() -> ConeInterval {
        theorem_cones(-FRAC_PI_6, FRAC_PI_6, -FRAC_PI_4, FRAC_PI_4).unwrap().1
    }

    // running-minimum oracle written independently of the implementation
    fn running_min_oracle(raw: &[f64]) -> Vec<f64> {
        (0..raw.len())
            .map(|k| {
                let m = raw[..=k].iter().cloned().fold(f64::INFINITY, f64::min);
                raw[k] - m.min(0.0)
            })
            .collect()
    }

    #[test]
    fn skorokhod_examples() {
        assert_eq!(skorokhod_reflect(&[0.5, 0.2, 0.7]).unwrap(), vec![0.5, 0.2, 0.7]);
        let out = skorokhod_reflect(&[0.5, -0.3, 0.1]).unwrap();
        let oracle = running_min_oracle(&[0.5, -0.3, 0.1]);
        for (o, e) in out.iter().zip([0.5, 0.0, 0.4]) {
            assert!((o - e).abs() < 1e-15);
        }
        assert_eq!(out, oracle);
        assert_eq!(skorokhod_reflect(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(skorokhod_reflect(&[]), Err(MotionError::EmptyPath));
        assert_eq!(skorokhod_reflect(&[-0.1]), Err(MotionError::NegativeStart(-0.1)));
    }

    #[test]
    fn mirror_step_in_wide_box() {
        // large box standing in for the upper half-plane near the origin
        let half_plane = PolygonalDomain::new(vec![
            Point2::new(-50.0, 0.0),
            Point2::new(50.0, 0.0),
            Point2::new(50.0, 50.0),
            Point2::new(-50.0, 50.0),
        ])
        .unwrap();
        let (p, edge) = step_rbm(&half_plane, Point2::new(0.0, 0.1), Point2::new(0.2, -0.3)).unwrap();
        assert_eq!(edge, Some(0));
        assert!((p.x1 - 0.2).abs() < 1e-15);
        assert!((p.x2 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn interior_step_is_translation() {
        let dom = example_triangle();
        let (p, edge) = step_rbm(&dom, Point2::new(0.3, 0.1), Point2::new(0.01, 0.02)).unwrap();
        assert_eq!(edge, None);
        assert_eq!(p, Point2::new(0.3, 0.1) + Point2::new(0.01, 0.02));
        assert!((p.x1 - 0.31).abs() < 1e-15 && (p.x2 - 0.12).abs() < 1e-15);
    }

    #[test]
    fn huge_step_from_apex_diverges() {
        let dom = example_triangle();
        let apex = dom.vertices()[2];
        let huge = Point2::new(0.0, 9.0 * dom.diameter());
        assert!(matches!(step_rbm(&dom, apex, huge), Err(MotionError::ReflectionDiverged { .. })));
    }

    #[test]
    fn zero_horizon_path() {
        let dom = example_triangle();
        let (x, y) = (Point2::new(0.3, 0.05), Point2::new(0.5, 0.1));
        let path = simulate_coupled_pair(&dom, x, y, 1e-3, 0.0, &RngStream::new(1, 0)).unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path.k_angle[0], angle_of(snap(y) - snap(x)).unwrap());
        let report = coupling_monitors(&path, &line_cone());
        assert!(report.ordering_ok && report.angle_ok && report.never_collide);
        assert_eq!(report.max_excursion, 0.0);
    }

    #[test]
    fn left_point_drives_w() {
        let dom = example_triangle();
        let path =
            simulate_coupled_pair(&dom, Point2::new(0.5, 0.1), Point2::new(0.3, 0.1), 1e-3, 0.0, &RngStream::new(1, 0))
                .unwrap();
        assert!(path.w_path.positions[0].x1 < path.z_path.positions[0].x1);
    }

    #[test]
    fn start_validation() {
        let dom = example_triangle();
        let s = RngStream::new(0, 0);
        let p = Point2::new(0.3, 0.1);
        assert!(matches!(
            simulate_coupled_pair(&dom, p, Point2::new(0.5, -0.1), 1e-3, 1.0, &s),
            Err(MotionError::StartOutside(_))
        ));
        assert!(matches!(simulate_coupled_pair(&dom, p, p, 1e-3, 1.0, &s), Err(MotionError::CoincidentStart(_))));
        assert!(matches!(simulate_coupled_pair(&dom, p, p, 0.0, 1.0, &s), Err(MotionError::BadTimeGrid { .. })));
    }

    #[test]
    fn interior_steps_keep_difference_exactly() {
        let dom = example_triangle();
        let (x, y) = (Point2::new(0.3, 0.05), Point2::new(0.5, 0.05));
        let path = simulate_coupled_pair(&dom, x, y, 1e-4, 0.05, &RngStream::new(11, 2)).unwrap();
        let initial = path.z_path.positions[0] - path.w_path.positions[0];
        assert!((initial.x1 - 0.2).abs() < 1e-13 && initial.x2 == 0.0);
        // until the first reflection the difference is the initial one, bitwise
        for k in 0..path.len() {
            if !path.interior_step[k] {
                break;
            }
            assert_eq!(path.z_path.positions[k] - path.w_path.positions[k], initial);
        }
        assert!(coupling_monitors(&path, &line_cone()).interior_translation_exact);
    }

    #[test]
    fn reflection_flags_match_positions() {
        let dom = example_triangle();
        let path =
            simulate_coupled_pair(&dom, Point2::new(0.2, 0.02), Point2::new(0.6, 0.02), 1e-3, 0.5, &RngStream::new(5, 0))
                .unwrap();
        for p in path.w_path.positions.iter().chain(&path.z_path.positions) {
            assert!(dom.contains(*p).inside);
        }
        assert!(path.reflection_fraction() > 0.0);
        for k in 1..path.len() {
            let both_free = path.w_path.reflected_edge[k].is_none() && path.z_path.reflected_edge[k].is_none();
            assert_eq!(path.interior_step[k], both_free);
        }
    }

    #[test]
    fn reproducible_and_thread_order_independent() {
        let dom = example_triangle();
        let (x, y) = (Point2::new(0.3, 0.05), Point2::new(0.5, 0.05));
        let batch = simulate_coupled_batch(&dom, x, y, 1e-3, 0.2, 9, 4).unwrap();
        for (k, path) in batch.iter().enumerate() {
            let solo = simulate_coupled_pair(&dom, x, y, 1e-3, 0.2, &RngStream::new(9, k as u64)).unwrap();
            assert_eq!(&solo, path);
        }
        assert_ne!(batch[0], batch[1]);
    }

    #[test]
    fn reflection_rate_scales_like_sqrt_dt() {
        let dom = example_triangle();
        let (x, y) = (Point2::new(0.3, 0.05), Point2::new(0.5, 0.05));
        let frac = |dt: f64| {
            let batch = simulate_coupled_batch(&dom, x, y, dt, 0.5, 3, 20).unwrap();
            batch.iter().map(CoupledPath::reflection_fraction).sum::<f64>() / batch.len() as f64
        };
        let coarse = frac(1e-3);
        let fine = frac(1e-4);
        assert!(coarse > 0.0 && fine > 0.0);
        let ratio = coarse / fine;
        // sqrt(10) ~ 3.16
        assert!(ratio > 2.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let dom = example_triangle();
        let path =
            simulate_coupled_pair(&dom, Point2::new(0.3, 0.05), Point2::new(0.5, 0.05), 1e-3, 0.003, &RngStream::new(1, 0))
                .unwrap();
        let mut buf = Vec::new();
        path.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,t,w1,w2,z1,z2,K_angle,interior");
        assert_eq!(lines.len(), 5);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols.len(), 8);
        // 17 significant digits
        assert_eq!(cols[2].split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }

    #[test]
    fn projected_step_examples() {
        let dom = example_triangle();
        let s = step_projected(&dom, Point2::new(0.3, 0.1), Point2::new(0.01, 0.02));
        assert_eq!((s.edge, s.at_vertex), (None, false));
        assert_eq!(s.pos, Point2::new(0.3, 0.1) + Point2::new(0.01, 0.02));
        // below the base: straight up onto it
        let s = step_projected(&dom, Point2::new(0.4, 0.01), Point2::new(0.1, -0.03));
        assert_eq!((s.edge, s.at_vertex), (Some(0), false));
        assert!((s.pos.x1 - 0.5).abs() < 1e-13 && s.pos.x2 == 0.0);
        // beyond the acute corner at the origin
        let s = step_projected(&dom, Point2::new(0.02, 0.005), Point2::new(-0.1, -0.01));
        assert!(s.at_vertex);
        assert_eq!(s.pos, Point2::new(0.0, 0.0));
    }

    #[test]
    fn projected_half_plane_matches_running_minimum() {
        let half_plane = PolygonalDomain::new(vec![
            Point2::new(-50.0, 0.0),
            Point2::new(50.0, 0.0),
            Point2::new(50.0, 50.0),
            Point2::new(-50.0, 50.0),
        ])
        .unwrap();
        let incs = [-0.25, 0.5, -0.75, -0.125, 0.375, -1.0, 0.25];
        let mut raw = vec![0.5];
        let mut pos = Point2::new(0.0, 0.5);
        let mut stepped = vec![0.5];
        for dx in incs {
            raw.push(raw.last().unwrap() + dx);
            pos = step_projected(&half_plane, pos, Point2::new(0.0, dx)).pos;
            stepped.push(pos.x2);
        }
        assert_eq!(stepped, running_min_oracle(&raw));
    }

    #[test]
    fn same_edge_projection_turns_difference_onto_the_wall() {
        let dom = example_triangle();
        // both copies pushed through the base by one increment
        let pair = CoupledPoint::new(Point2::new(0.3, 0.01), Point2::new(0.35, 0.03));
        let mut rng = RngStream::new(0, 0).rng();
        let step = step_coupled(&dom, pair, Point2::new(0.0, -0.05), 1e-4, &mut rng);
        assert_eq!((step.w_edge, step.z_edge), (Some(0), Some(0)));
        assert_eq!(step.pair.d.x2, 0.0);
        assert!(step.pair.d.x1 > 0.0);
    }

    #[test]
    fn linear_regime_projects_onto_wall_direction() {
        let dom = example_triangle();
        let d = Point2::new(3e-12, -1e-12);
        let pair = CoupledPoint { w: snap(Point2::new(0.1, 0.02)), z: snap(Point2::new(0.1, 0.02)), d };
        let mut rng = RngStream::new(0, 0).rng();
        // interior step keeps d bitwise
        let step = step_coupled(&dom, pair, snap(Point2::new(0.01, 0.0)), 1e-4, &mut rng);
        assert_eq!(step.pair.d, d);
        // push through the left wall: d turns to its direction pi/6
        let step = step_coupled(&dom, step.pair, snap(Point2::new(-0.02, 0.06)), 1e-4, &mut rng);
        assert_eq!(step.w_edge, Some(2));
        assert!((angle_of(step.pair.d).unwrap() - FRAC_PI_6).abs() < 1e-12);
        assert!(step.pair.d.norm() <= d.norm());
    }

    #[test]
    fn tiny_differences_are_renormalized() {
        let dom = example_triangle();
        let d = Point2::new(1e-182, 0.0);
        let pair = CoupledPoint { w: snap(Point2::new(0.5, 0.01)), z: snap(Point2::new(0.5, 0.01)), d };
        let mut rng = RngStream::new(0, 0).rng();
        let step = step_coupled(&dom, pair, snap(Point2::new(0.0, -0.02)), 1e-4, &mut rng);
        assert_eq!(step.pair.d, Point2::new(1e-182 * RENORMALIZE_FACTOR, 0.0));
    }

    #[test]
    fn coupled_copies_stay_ordered_in_the_example_triangle() {
        let dom = example_triangle();
        let batch = simulate_coupled_batch(&dom, Point2::new(0.3, 0.1), Point2::new(0.5, 0.1), 1e-3, 0.5, 17, 20).unwrap();
        let report = BatchCouplingReport::from_reports(
            1e-3,
            &batch.iter().map(|p| coupling_monitors(p, &line_cone())).collect::<Vec<_>>(),
        );
        assert!(report.pass, "{report:?}");
    }

    proptest::proptest! {
        #[test]
        fn coupled_step_keeps_difference_in_line_cone(
            wx in 0.05f64..0.9, wy in 0.0f64..1.0, sep in -30.0f64..-2.0, k in -0.78f64..0.78,
            incs in proptest::collection::vec((-0.03f64..0.03, -0.03f64..0.03), 1..40), seed in 0u64..1000,
        ) {
            let dom = example_triangle();
            let cone = line_cone();
            // a start point inside, scaled under the apex height
            let w = Point2::new(wx, wy * 0.2 * wx.min(1.0 - wx));
            let r = 10f64.powf(sep / 3.0);
            let z = w + Point2::new(r * k.cos(), r * k.sin());
            proptest::prop_assume!(dom.is_inside(snap(z)) && snap(z) != snap(w));
            let mut pair = CoupledPoint::new(w, z);
            proptest::prop_assume!(cone.contains(angle_of(pair.d).unwrap()));
            let mut rng = RngStream::new(seed, 0).rng();
            for (a, b) in incs {
                pair = step_coupled(&dom, pair, snap(Point2::new(a, b)), 1e-4, &mut rng).pair;
                proptest::prop_assert!(pair.d.x1 > 0.0);
                proptest::prop_assert_eq!(cone.excursion(angle_of(pair.d).unwrap(), 0.0), 0.0);
                proptest::prop_assert!(dom.is_inside(pair.w) && dom.is_inside(pair.z));
            }
        }

        #[test]
        fn skorokhod_output_dominates_and_is_nonnegative(
            start in 0.0f64..1.0, incs in proptest::collection::vec(-0.5f64..0.5, 1..60),
        ) {
            let mut raw = vec![start];
            for d in incs {
                let last = *raw.last().unwrap();
                raw.push(last + d);
            }
            let out = skorokhod_reflect(&raw).unwrap();
            let first_negative = raw.iter().position(|&r| r < 0.0).unwrap_or(raw.len());
            for k in 0..raw.len() {
                proptest::prop_assert!(out[k] >= 0.0);
                proptest::prop_assert!(out[k] >= raw[k]);
                if k < first_negative {
                    proptest::prop_assert_eq!(out[k], raw[k]);
                }
            }
        }
    }
}
