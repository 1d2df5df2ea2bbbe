//! Checkers for the gradient cone, monotonicity along admissible lines,
//! log-Laplace duality between the particle system and the PDE, and pathwise
//! domination in coupled branching runs.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::branching::{
    integrate_test_function, mean_and_standard_error, simulate_branching, BranchingError, BranchingMechanism,
    CoupledPopulation,
};
use crate::geometry::{angle_of, theorem_cones, ConeInterval, GeometryError, Point2, PolygonalDomain};
use crate::pde::{default_min_grad, gradient_angles, ScalarField, Trajectory};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("verify: duality check needs a mechanism without jump part")]
    NotBinary,
    #[error("verify: test function hypothesis fails: {0}")]
    Hypothesis(String),
    #[error("verify: {0}")]
    BadInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Branching(#[from] BranchingError),
    #[error("verify: io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeTimeSlice {
    pub t: f64,
    pub max_violation: f64,
    pub worst_element: Option<usize>,
    pub n_masked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeReport {
    pub cone: ConeInterval,
    /// Element evaluations over all stored times.
    pub n_elements_checked: usize,
    pub n_masked: usize,
    /// Largest distance of an unmasked angle outside `[cone.lo, cone.hi]`.
    pub max_violation: f64,
    pub slack: f64,
    pub per_time: Vec<ConeTimeSlice>,
    pub pass: bool,
}

/// Gradient-angle containment at every stored time. `min_grad = None` uses
/// [`default_min_grad`] per field.
pub fn check_cone(traj: &Trajectory, cone: &ConeInterval, min_grad: Option<f64>, slack: f64) -> ConeReport {
    let mut per_time = Vec::with_capacity(traj.fields.len());
    let (mut checked, mut masked, mut worst) = (0, 0, 0.0f64);
    for field in &traj.fields {
        let angles = gradient_angles(field, min_grad.unwrap_or_else(|| default_min_grad(field)));
        let mut slice = ConeTimeSlice { t: field.time, max_violation: 0.0, worst_element: None, n_masked: 0 };
        for (e, angle) in angles.iter().enumerate() {
            match angle {
                None => slice.n_masked += 1,
                Some(theta) => {
                    let v = cone.excursion(*theta, 0.0);
                    if slice.worst_element.is_none() || v > slice.max_violation {
                        slice.max_violation = v;
                        slice.worst_element = Some(e);
                    }
                }
            }
        }
        checked += angles.len();
        masked += slice.n_masked;
        worst = worst.max(slice.max_violation);
        per_time.push(slice);
    }
    ConeReport {
        cone: *cone,
        n_elements_checked: checked,
        n_masked: masked,
        max_violation: worst,
        slack,
        per_time,
        pass: worst <= slack,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneViolation {
    pub direction: f64,
    pub p_before: Point2,
    pub p_after: Point2,
    pub u_before: f64,
    pub u_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub directions: Vec<f64>,
    pub n_offsets: usize,
    pub n_samples: usize,
    pub tolerance: f64,
    /// Largest decrease `u_before - u_after` seen between consecutive samples.
    pub max_drop: f64,
    pub worst: Option<MonotoneViolation>,
    pub pass: bool,
}

/// `n` directions evenly spread strictly inside `cone`.
pub fn cone_directions(cone: &ConeInterval, n: usize) -> Vec<f64> {
    (0..n).map(|i| cone.lo + (i as f64 + 0.5) / n as f64 * cone.width()).collect()
}

/// Parameter range `s` with `q + s d` inside the triangle, if nonempty.
fn clip_line(domain: &PolygonalDomain, q: Point2, d: Point2) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for edge in domain.edges() {
        // inward_normal . (q + s d - start) >= 0
        let c0 = edge.line_distance(q);
        let c1 = edge.inward_normal.dot(d);
        if c1.abs() < 1e-15 {
            if c0 < 0.0 {
                return None;
            }
        } else if c1 > 0.0 {
            lo = lo.max(-c0 / c1);
        } else {
            hi = hi.min(-c0 / c1);
        }
    }
    (hi > lo).then_some((lo, hi))
}

/// Sample the interpolant along `n_offsets` parallel lines for each direction
/// (all with angle in `(-pi/2, pi/2)`) and require nondecreasing values in
/// the direction of increasing `x1`, up to `1e-10 * range(u)`.
pub fn check_monotone_in_directions(
    field: &ScalarField,
    directions: &[f64],
    n_offsets: usize,
    n_samples: usize,
) -> MonotoneReport {
    let corners = field.mesh.corners();
    let domain = PolygonalDomain::new(corners.to_vec()).expect("mesh corners form a triangle");
    let tolerance = 1e-10 * field.range();
    let mut max_drop = 0.0f64;
    let mut worst = None;
    for &theta in directions {
        let d = Point2::new(theta.cos(), theta.sin());
        let normal = Point2::new(-d.x2, d.x1);
        let proj: Vec<f64> = corners.iter().map(|c| normal.dot(*c)).collect();
        let (nlo, nhi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for j in 0..n_offsets {
            let offset = nlo + (j as f64 + 0.5) / n_offsets as f64 * (nhi - nlo);
            let q = offset * normal;
            let Some((s0, s1)) = clip_line(&domain, q, d) else { continue };
            let mut prev: Option<(Point2, f64)> = None;
            for k in 0..n_samples.max(2) {
                let s = s0 + (s1 - s0) * k as f64 / (n_samples.max(2) - 1) as f64;
                let p = q + s * d;
                let Some(u) = field.interpolate(p) else { continue };
                if let Some((pp, pu)) = prev {
                    let drop = pu - u;
                    if drop > max_drop {
                        max_drop = drop;
                        worst = Some(MonotoneViolation { direction: theta, p_before: pp, p_after: p, u_before: pu, u_after: u });
                    }
                }
                prev = Some((p, u));
            }
        }
    }
    MonotoneReport {
        directions: directions.to_vec(),
        n_offsets,
        n_samples,
        tolerance,
        max_drop,
        worst,
        pass: max_drop <= tolerance,
    }
}

/// Monotonicity along `n_lines` directions spread inside `line_cone`, with
/// `n_samples` parallel offsets and `n_samples` points per line.
pub fn check_monotone_along_lines(
    field: &ScalarField,
    line_cone: &ConeInterval,
    n_lines: usize,
    n_samples: usize,
) -> MonotoneReport {
    check_monotone_in_directions(field, &cone_directions(line_cone, n_lines), n_samples, n_samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub x: Point2,
    pub t: f64,
    pub pde_value: f64,
    pub mc_estimate: f64,
    pub mc_standard_error: f64,
    pub n_particles: usize,
    pub n_replicates: usize,
    pub rel_tol: f64,
    pub dt: f64,
    pub seed: u64,
    /// Every replicate died out (flagged, not a failure).
    pub all_extinct: bool,
    pub pass: bool,
}

/// `-log` of a sample mean of `exp(-<X, phi>)` values, with a delta-method
/// standard error.
pub fn log_laplace_estimate(pairings: &[f64]) -> (f64, f64) {
    let samples: Vec<f64> = pairings.iter().map(|v| (-v).exp()).collect();
    let (mean, se) = mean_and_standard_error(&samples);
    (-mean.ln(), se / mean)
}

pub struct DualitySetup<'a> {
    pub domain: &'a PolygonalDomain,
    pub x: Point2,
    pub mech: &'a BranchingMechanism,
    pub n_particles: usize,
    pub n_replicates: usize,
    pub dt: f64,
    pub t_end: f64,
    pub rel_tol: f64,
    pub seed: u64,
}

/// Compare `-log E exp(-<X_t, phi>)` over `M` replicates started from `N`
/// particles of mass `1/N` at `x` with the PDE value `u(t_end, x)`.
pub fn check_duality<F>(setup: &DualitySetup, phi: F, pde: &Trajectory) -> Result<DualityReport, VerifyError>
where
    F: Fn(Point2) -> f64 + Sync,
{
    let s = setup;
    if !s.mech.is_binary() {
        return Err(VerifyError::NotBinary);
    }
    if s.n_replicates == 0 {
        return Err(VerifyError::BadInput("need at least one replicate".into()));
    }
    let pde_value = pde
        .value(s.t_end, s.x)
        .ok_or_else(|| VerifyError::BadInput(format!("point {} is outside the mesh", s.x)))?;
    let runs: Vec<(f64, bool)> = (0..s.n_replicates as u64)
        .into_par_iter()
        .map(|k| {
            let pop = simulate_branching(s.domain, s.x, s.mech, s.n_particles, s.dt, s.t_end, &RngStream::new(s.seed, k))?;
            Ok((pop.integrate(|p| phi(*p)), pop.particles.is_empty()))
        })
        .collect::<Result<_, BranchingError>>()?;
    let pairings: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let (mc_estimate, mc_standard_error) = log_laplace_estimate(&pairings);
    let tol = (3.0 * mc_standard_error).max(s.rel_tol * pde_value.abs());
    Ok(DualityReport {
        x: s.x,
        t: s.t_end,
        pde_value,
        mc_estimate,
        mc_standard_error,
        n_particles: s.n_particles,
        n_replicates: s.n_replicates,
        rel_tol: s.rel_tol,
        dt: s.dt,
        seed: s.seed,
        all_extinct: runs.iter().all(|r| r.1),
        pass: (mc_estimate - pde_value).abs() <= tol,
    })
}

/// Spot-check `c <= angle(grad phi) <= d` by central differences at `n_points`
/// random interior points. A vanishing gradient is accepted.
pub fn check_phi_hypothesis<F: Fn(Point2) -> f64>(
    domain: &PolygonalDomain,
    phi: F,
    c: f64,
    d: f64,
    n_points: usize,
    seed: u64,
) -> Result<(), VerifyError> {
    let h = 1e-6 * domain.diameter();
    let v = domain.vertices();
    let (lo, hi) = v.iter().fold((Point2::new(f64::INFINITY, f64::INFINITY), -Point2::new(f64::INFINITY, f64::INFINITY)), |(a, b), p| {
        (Point2::new(a.x1.min(p.x1), a.x2.min(p.x2)), Point2::new(b.x1.max(p.x1), b.x2.max(p.x2)))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found = 0;
    let mut attempts = 0;
    while found < n_points {
        attempts += 1;
        if attempts > 1000 * n_points {
            return Err(VerifyError::BadInput("could not sample interior points".into()));
        }
        let p = Point2::new(rng.random_range(lo.x1..hi.x1), rng.random_range(lo.x2..hi.x2));
        if domain.contains(p).signed_distance < 2.0 * h {
            continue;
        }
        found += 1;
        let g = Point2::new(
            (phi(p + Point2::new(h, 0.0)) - phi(p - Point2::new(h, 0.0))) / (2.0 * h),
            (phi(p + Point2::new(0.0, h)) - phi(p - Point2::new(0.0, h))) / (2.0 * h),
        );
        let scale = phi(p).abs().max(1.0);
        if !(g.is_finite() && phi(p).is_finite()) {
            return Err(VerifyError::Hypothesis(format!("non-finite value or gradient at {p}")));
        }
        if g.norm() <= 1e-8 * scale {
            continue;
        }
        let theta = angle_of(g)?;
        if theta < c - 1e-9 || theta > d + 1e-9 {
            return Err(VerifyError::Hypothesis(format!(
                "gradient angle {theta} at {p} lies outside [{c}, {d}]"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationViolation {
    pub replicate: usize,
    pub t: f64,
    pub x_pairing: f64,
    pub y_pairing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominationReport {
    pub n_replicates: usize,
    pub n_outputs: usize,
    pub n_violations: usize,
    pub first_violation: Option<DominationViolation>,
    pub dump_path: Option<PathBuf>,
    pub final_time: f64,
    /// `-log` mean of `exp(-<X_t, phi>)` at the final time, and its error.
    pub estimate_x: f64,
    pub estimate_x_se: f64,
    pub estimate_y: f64,
    pub estimate_y_se: f64,
    pub sandwich_ok: bool,
    pub pass: bool,
}

/// Theorem angles and the `phi` cone used by the domination check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// `<X_t, phi> <= <Y_t, phi>` at every snapshot of every replicate, where
/// `runs[k]` holds the snapshots of replicate `k`. The start pair is taken
/// from the first snapshot and must lie on an admissible line with
/// `x1 < y1`. On failure the first offending replicate is written to
/// `dump_dir/domination_counterexample.csv` when a directory is given.
pub fn check_pathwise_domination<F: Fn(Point2) -> f64>(
    domain: &PolygonalDomain,
    runs: &[Vec<CoupledPopulation>],
    phi: F,
    params: TheoremParams,
    dump_dir: Option<&Path>,
) -> Result<DominationReport, VerifyError> {
    let TheoremParams { a, b, c, d } = params;
    let (_, line_cone) = theorem_cones(a, b, c, d)?;
    let start = runs
        .iter()
        .find_map(|r| r.first().and_then(|s| s.particles.first()))
        .ok_or_else(|| VerifyError::BadInput("no particles in the first snapshot".into()))?;
    let (x, y) = (start.state.pos_x, start.state.pos_y);
    if x.x1 < y.x1 {
        let k = angle_of(y - x)?;
        if !line_cone.contains(k) {
            return Err(VerifyError::Hypothesis(format!(
                "start pair direction {k} outside the admissible line cone [{}, {}]",
                line_cone.lo, line_cone.hi
            )));
        }
    } else if x != y {
        return Err(VerifyError::Hypothesis(format!("start pair {x}, {y} needs x1 < y1")));
    }
    check_phi_hypothesis(domain, &phi, c, d, 200, 0x5eed)?;

    let mut n_violations = 0;
    let mut first_violation = None;
    let mut n_outputs = 0;
    let (mut final_x, mut final_y) = (Vec::with_capacity(runs.len()), Vec::with_capacity(runs.len()));
    let mut final_time = 0.0;
    for (k, snapshots) in runs.iter().enumerate() {
        n_outputs = n_outputs.max(snapshots.len());
        for snap in snapshots {
            let (xv, yv) = integrate_test_function(snap, &phi);
            if xv > yv {
                n_violations += 1;
                first_violation.get_or_insert(DominationViolation { replicate: k, t: snap.time, x_pairing: xv, y_pairing: yv });
            }
        }
        if let Some(last) = snapshots.last() {
            let (xv, yv) = integrate_test_function(last, &phi);
            final_x.push(xv);
            final_y.push(yv);
            final_time = last.time;
        }
    }
    let mut dump_path = None;
    if let (Some(v), Some(dir)) = (&first_violation, dump_dir) {
        let path = dir.join("domination_counterexample.csv");
        let mut out = BufWriter::new(File::create(&path)?);
        for (i, snap) in runs[v.replicate].iter().enumerate() {
            snap.write_csv(&mut out, i == 0)?;
        }
        dump_path = Some(path);
    }
    let (estimate_x, estimate_x_se) = log_laplace_estimate(&final_x);
    let (estimate_y, estimate_y_se) = log_laplace_estimate(&final_y);
    let sandwich_ok = estimate_x <= estimate_y;
    Ok(DominationReport {
        n_replicates: runs.len(),
        n_outputs,
        n_violations,
        first_violation,
        dump_path,
        final_time,
        estimate_x,
        estimate_x_se,
        estimate_y,
        estimate_y_se,
        sandwich_ok,
        pass: n_violations == 0 && sandwich_ok,
    })
}
