//! Branching mechanisms and branching particle systems.
//!
//! A mechanism is `Phi(l) = a1 l - b1 l^2 + int (1 - e^{-l u} - l u) nu(du)` with
//! `nu` absent, a stable tail `c1 u^{-2-beta} du`, or finitely many atoms.
//!
//! Particle systems approximate the superprocess with `N` particles of mass
//! `1/N`, critical-binary-plus-drift branching at rate `r = 2 b1 N` and
//! offspring probabilities `p2 = 1/2 + a1/(2r)`, `p0 = 1/2 - a1/(2r)`.
//! Over one time step a particle is replaced by the exact number of
//! descendants of a linear birth-death process with birth rate `r p2` and
//! death rate `r p0`; every descendant inherits the parent's position at the
//! end of the step.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point2, PolygonalDomain};
use crate::reflected_motion::{
    check_lattice_domain, gaussian_increment, snap, step_count, step_coupled, step_projected, CoupledPoint, MotionError,
};
use crate::rng::{particle_rng, RngStream};

/// Population cap as a multiple of the resolution `N`.
pub const POPULATION_CAP_FACTOR: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchingError {
    #[error("Phi is defined for lambda >= 0, got {0}")]
    NegativeArgument(f64),
    #[error("b1 must be nonnegative and finite, got {0}")]
    NegativeQuadratic(f64),
    #[error("a1 must be finite, got {0}")]
    NonFiniteLinear(f64),
    #[error("stable tail needs c1 > 0 and beta in (0, 1), got c1 = {c1}, beta = {beta}")]
    BadStableTail { c1: f64, beta: f64 },
    #[error("beta must lie in (0, 1), got {0}")]
    BetaOutOfRange(f64),
    #[error("atom {index} must have u > 0 and weight > 0, got ({u}, {weight})")]
    BadAtom { index: usize, u: f64, weight: f64 },
    #[error("particle calibration needs b1 > 0")]
    NoQuadraticTerm,
    #[error("particle calibration needs nu = None")]
    JumpMeasureUnsupported,
    #[error("|a1| = {a1} exceeds the branching rate r = {rate}")]
    DriftTooLarge { a1: f64, rate: f64 },
    #[error("resolution N must be at least 1")]
    ZeroResolution,
    #[error("population exceeded {cap} particles at t = {time}")]
    PopulationExplosion { cap: usize, time: f64 },
    #[error("starting point {0} is outside the domain")]
    StartOutside(Point2),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Jump part of the branching mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpMeasure {
    #[default]
    None,
    /// `c1 u^{-2-beta} du` on `(0, inf)`.
    StableTail { c1: f64, beta: f64 },
    /// `sum_i weight_i delta_{u_i}`.
    Atoms { atoms: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingMechanism {
    pub a1: f64,
    pub b1: f64,
    #[serde(default)]
    pub nu: JumpMeasure,
}

impl BranchingMechanism {
    pub fn new(a1: f64, b1: f64, nu: JumpMeasure) -> Result<Self, BranchingError> {
        let mech = Self { a1, b1, nu };
        mech.validate()?;
        Ok(mech)
    }

    pub fn binary(a1: f64, b1: f64) -> Result<Self, BranchingError> {
        Self::new(a1, b1, JumpMeasure::None)
    }

    /// The zero mechanism (pure heat flow).
    pub fn zero() -> Self {
        Self { a1: 0.0, b1: 0.0, nu: JumpMeasure::None }
    }

    pub fn stable(beta: f64) -> Result<Self, BranchingError> {
        let c1 = stable_tail_constant(beta)?;
        Self::new(0.0, 0.0, JumpMeasure::StableTail { c1, beta })
    }

    pub fn validate(&self) -> Result<(), BranchingError> {
        if !self.a1.is_finite() {
            return Err(BranchingError::NonFiniteLinear(self.a1));
        }
        if !(self.b1 >= 0.0 && self.b1.is_finite()) {
            return Err(BranchingError::NegativeQuadratic(self.b1));
        }
        match &self.nu {
            JumpMeasure::None => {}
            &JumpMeasure::StableTail { c1, beta } => {
                if !(c1 > 0.0 && c1.is_finite() && beta > 0.0 && beta < 1.0) {
                    return Err(BranchingError::BadStableTail { c1, beta });
                }
            }
            JumpMeasure::Atoms { atoms } => {
                for (index, &(u, weight)) in atoms.iter().enumerate() {
                    if !(u > 0.0 && u.is_finite() && weight > 0.0 && weight.is_finite()) {
                        return Err(BranchingError::BadAtom { index, u, weight });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.nu, JumpMeasure::None)
    }

    /// `Phi(lambda)` for `lambda >= 0`.
    pub fn phi(&self, lambda: f64) -> Result<f64, BranchingError> {
        if !(lambda >= 0.0) {
            return Err(BranchingError::NegativeArgument(lambda));
        }
        Ok(self.polynomial_part(lambda) + self.jump_part(lambda))
    }

    /// Reaction term used by the PDE solvers. Equals `Phi(u)` for `u >= 0`;
    /// below zero (discretisation undershoot) the polynomial and atomic parts
    /// are continued analytically and the stable part by zero.
    #[inline]
    pub fn reaction(&self, u: f64) -> f64 {
        if u >= 0.0 {
            self.polynomial_part(u) + self.jump_part(u)
        } else {
            let jumps = match &self.nu {
                JumpMeasure::Atoms { .. } => self.jump_part(u),
                _ => 0.0,
            };
            self.polynomial_part(u) + jumps
        }
    }

    #[inline]
    fn polynomial_part(&self, lambda: f64) -> f64 {
        self.a1 * lambda - self.b1 * lambda * lambda
    }

    fn jump_part(&self, lambda: f64) -> f64 {
        match &self.nu {
            JumpMeasure::None => 0.0,
            &JumpMeasure::StableTail { c1, beta } => {
                -c1 * libm::tgamma(1.0 - beta) * lambda.powf(1.0 + beta) / (beta * (1.0 + beta))
            }
            JumpMeasure::Atoms { atoms } => atoms
                .iter()
                .map(|&(u, w)| w * (-(-lambda * u).exp_m1() - lambda * u))
                .sum(),
        }
    }
}

pub fn phi_eval(mech: &BranchingMechanism, lambda: f64) -> Result<f64, BranchingError> {
    mech.phi(lambda)
}

/// The `c1` making the stable tail mechanism equal `-lambda^{1+beta}`.
pub fn stable_tail_constant(beta: f64) -> Result<f64, BranchingError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(BranchingError::BetaOutOfRange(beta));
    }
    Ok(beta * (1.0 + beta) / libm::tgamma(1.0 - beta))
}

/// Branching rate and offspring law of the particle approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub resolution: usize,
    pub rate: f64,
    pub p0: f64,
    pub p2: f64,
}

pub fn calibrate_particles(mech: &BranchingMechanism, n: usize) -> Result<Calibration, BranchingError> {
    mech.validate()?;
    if !mech.is_binary() {
        return Err(BranchingError::JumpMeasureUnsupported);
    }
    if n == 0 {
        return Err(BranchingError::ZeroResolution);
    }
    if mech.b1 == 0.0 {
        return Err(BranchingError::NoQuadraticTerm);
    }
    let rate = 2.0 * mech.b1 * n as f64;
    if mech.a1.abs() > rate {
        return Err(BranchingError::DriftTooLarge { a1: mech.a1, rate });
    }
    let skew = mech.a1 / (2.0 * rate);
    Ok(Calibration { resolution: n, rate, p0: 0.5 - skew, p2: 0.5 + skew })
}

impl Calibration {
    /// Distribution of the number of descendants after `dt`.
    pub fn step_law(&self, dt: f64) -> StepOffspringLaw {
        let birth = self.rate * self.p2;
        let death = self.rate * self.p0;
        let growth = (birth - death) * dt;
        let (extinction, ratio) = if growth.abs() < 1e-12 {
            let s = birth * dt / (1.0 + birth * dt);
            (s, s)
        } else {
            let e = growth.exp();
            let denom = birth * e - death;
            (death * (e - 1.0) / denom, birth * (e - 1.0) / denom)
        };
        StepOffspringLaw::new(extinction, ratio)
    }
}

/// `P(0) = extinction`, `P(k) = (1 - extinction)(1 - ratio) ratio^{k-1}` for `k >= 1`.
#[derive(Debug, Clone, Copy)]
pub struct StepOffspringLaw {
    pub extinction: f64,
    pub ratio: f64,
    extra: Option<Geometric>,
}

impl StepOffspringLaw {
    fn new(extinction: f64, ratio: f64) -> Self {
        let extra = if ratio > 0.0 { Geometric::new(1.0 - ratio).ok() } else { None };
        Self { extinction, ratio, extra }
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.extinction) / (1.0 - self.ratio)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() < self.extinction {
            return 0;
        }
        1 + self.extra.map_or(0, |g| g.sample(rng))
    }
}

/// Motion state carried by a particle.
pub trait Carrier: Clone + Send + Sync {
    /// Move by `increment` over a step of length `dt`; `rng` feeds any refinement.
    fn advance<R: Rng + ?Sized>(
        &mut self,
        domain: &PolygonalDomain,
        increment: Point2,
        dt: f64,
        rng: &mut R,
    ) -> Result<(), MotionError>;
    fn snapped(&self) -> Self;
    /// A carried position lying outside `domain`, if any.
    fn outside_point(&self, domain: &PolygonalDomain) -> Option<Point2>;
}

impl Carrier for Point2 {
    #[inline]
    fn advance<R: Rng + ?Sized>(
        &mut self,
        domain: &PolygonalDomain,
        increment: Point2,
        _dt: f64,
        _rng: &mut R,
    ) -> Result<(), MotionError> {
        *self = step_projected(domain, *self, increment).pos;
        Ok(())
    }

    fn snapped(&self) -> Self {
        snap(*self)
    }

    fn outside_point(&self, domain: &PolygonalDomain) -> Option<Point2> {
        (!domain.is_inside(*self)).then_some(*self)
    }
}

/// Positions of one lineage in the two synchronously coupled copies, with the
/// tracked difference `diff = pos_y - pos_x` (see [`CoupledPoint`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub pos_x: Point2,
    pub pos_y: Point2,
    pub diff: Point2,
}

impl PairState {
    pub fn new(pos_x: Point2, pos_y: Point2) -> Self {
        Self { pos_x, pos_y, diff: pos_y - pos_x }
    }
}

impl Carrier for PairState {
    #[inline]
    fn advance<R: Rng + ?Sized>(
        &mut self,
        domain: &PolygonalDomain,
        increment: Point2,
        dt: f64,
        rng: &mut R,
    ) -> Result<(), MotionError> {
        let pair = CoupledPoint { w: self.pos_x, z: self.pos_y, d: self.diff };
        let next = step_coupled(domain, pair, increment, dt, rng).pair;
        *self = Self { pos_x: next.w, pos_y: next.z, diff: next.d };
        Ok(())
    }

    fn snapped(&self) -> Self {
        Self::new(snap(self.pos_x), snap(self.pos_y))
    }

    fn outside_point(&self, domain: &PolygonalDomain) -> Option<Point2> {
        [self.pos_x, self.pos_y].into_iter().find(|p| !domain.is_inside(*p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle<S> {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth_time: f64,
    pub mass: f64,
    pub state: S,
}

pub type PairedParticle = Particle<PairState>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Population<S> {
    pub resolution: usize,
    pub particles: Vec<Particle<S>>,
    pub time: f64,
}

pub type CoupledPopulation = Population<PairState>;

impl<S> Population<S> {
    pub fn total_mass(&self) -> f64 {
        self.particles.len() as f64 / self.resolution as f64
    }

    pub fn integrate<F: Fn(&S) -> f64>(&self, f: F) -> f64 {
        self.particles.iter().map(|p| p.mass * f(&p.state)).sum()
    }
}

impl CoupledPopulation {
    /// CSV snapshot: `t,particle_id,parent_id,mass,x1,x2,y1,y2`. Roots have an
    /// empty parent id.
    pub fn write_csv<W: Write>(&self, mut out: W, with_header: bool) -> io::Result<()> {
        if with_header {
            writeln!(out, "t,particle_id,parent_id,mass,x1,x2,y1,y2")?;
        }
        for p in &self.particles {
            let parent = p.parent_id.map(|id| id.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.time, p.id, parent, p.mass, p.state.pos_x.x1, p.state.pos_x.x2, p.state.pos_y.x1, p.state.pos_y.x2
            )?;
        }
        Ok(())
    }
}

/// `(<X, phi>, <Y, phi>)` for the two projections of a coupled population.
pub fn integrate_test_function<F: Fn(Point2) -> f64>(pop: &CoupledPopulation, phi: F) -> (f64, f64) {
    let x = pop.integrate(|s| phi(s.pos_x));
    let y = pop.integrate(|s| phi(s.pos_y));
    (x, y)
}

/// A branching particle system advanced one step at a time.
pub struct BranchingSystem<'d, S> {
    domain: &'d PolygonalDomain,
    law: StepOffspringLaw,
    dt: f64,
    sqrt_dt: f64,
    resolution: usize,
    steps_taken: usize,
    particles: Vec<(Particle<S>, Xoshiro256PlusPlus)>,
    next_id: u64,
    key: u64,
    cap: usize,
}

impl<'d, S: Carrier> BranchingSystem<'d, S> {
    pub fn new(
        domain: &'d PolygonalDomain,
        start: S,
        mech: &BranchingMechanism,
        resolution: usize,
        dt: f64,
        stream: &RngStream,
    ) -> Result<Self, BranchingError> {
        let calibration = calibrate_particles(mech, resolution)?;
        step_count(dt, 0.0)?;
        check_lattice_domain(domain)?;
        let start = start.snapped();
        if let Some(p) = start.outside_point(domain) {
            return Err(BranchingError::StartOutside(p));
        }
        let key = stream.particle_key();
        let mass = 1.0 / resolution as f64;
        let particles = (0..resolution as u64)
            .map(|id| {
                let p = Particle { id, parent_id: None, birth_time: 0.0, mass, state: start.clone() };
                (p, particle_rng(key, id))
            })
            .collect();
        Ok(Self {
            domain,
            law: calibration.step_law(dt),
            dt,
            sqrt_dt: dt.sqrt(),
            resolution,
            steps_taken: 0,
            particles,
            next_id: resolution as u64,
            key,
            cap: POPULATION_CAP_FACTOR * resolution,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn step(&mut self) -> Result<(), BranchingError> {
        let t_next = (self.steps_taken + 1) as f64 * self.dt;
        let mut next = Vec::with_capacity(self.particles.len() + self.particles.len() / 2);
        for (mut particle, mut rng) in self.particles.drain(..) {
            let inc = gaussian_increment(&mut rng, self.sqrt_dt);
            particle.state.advance(self.domain, inc, self.dt, &mut rng)?;
            let offspring = self.law.sample(&mut rng);
            if offspring == 0 {
                continue;
            }
            let parent = particle.id;
            let (mass, state) = (particle.mass, particle.state.clone());
            next.push((particle, rng));
            for _ in 1..offspring {
                let id = self.next_id;
                self.next_id += 1;
                let child =
                    Particle { id, parent_id: Some(parent), birth_time: t_next, mass, state: state.clone() };
                next.push((child, particle_rng(self.key, id)));
            }
            if next.len() > self.cap {
                return Err(BranchingError::PopulationExplosion { cap: self.cap, time: t_next });
            }
        }
        self.particles = next;
        self.steps_taken += 1;
        Ok(())
    }

    pub fn population(&self) -> Population<S> {
        Population {
            resolution: self.resolution,
            particles: self.particles.iter().map(|(p, _)| p.clone()).collect(),
            time: self.time(),
        }
    }

    /// Mass-weighted integral of `f` over the current particles.
    pub fn integrate<F: Fn(&S) -> f64>(&self, f: F) -> f64 {
        self.particles.iter().map(|(p, _)| p.mass * f(&p.state)).sum()
    }
}

/// Step indices at which `n_outputs` uniformly spaced snapshots are taken,
/// always including 0 and the final step.
pub fn output_steps(total_steps: usize, n_outputs: usize) -> Vec<usize> {
    let n = n_outputs.max(1);
    let mut steps: Vec<usize> = (0..=n).map(|i| (i * total_steps + n / 2) / n).collect();
    steps.dedup();
    steps
}

/// Coupled branching system started from `N` paired particles at `(x, y)`;
/// returns snapshots at `n_outputs + 1` uniform times from 0 to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coupled_branching(
    domain: &PolygonalDomain,
    x: Point2,
    y: Point2,
    mech: &BranchingMechanism,
    resolution: usize,
    dt: f64,
    t_end: f64,
    n_outputs: usize,
    stream: &RngStream,
) -> Result<Vec<CoupledPopulation>, BranchingError> {
    let steps = step_count(dt, t_end)?;
    let mut system = BranchingSystem::new(domain, PairState::new(x, y), mech, resolution, dt, stream)?;
    let outputs = output_steps(steps, n_outputs);
    let mut snapshots = Vec::with_capacity(outputs.len());
    let mut k = 0;
    for &target in &outputs {
        while k < target {
            system.step()?;
            k += 1;
        }
        snapshots.push(system.population());
    }
    Ok(snapshots)
}

/// Single-projection system started from `N` particles at `x`; returns the
/// final population.
pub fn simulate_branching(
    domain: &PolygonalDomain,
    x: Point2,
    mech: &BranchingMechanism,
    resolution: usize,
    dt: f64,
    t_end: f64,
    stream: &RngStream,
) -> Result<Population<Point2>, BranchingError> {
    let steps = step_count(dt, t_end)?;
    let mut system = BranchingSystem::new(domain, x, mech, resolution, dt, stream)?;
    for _ in 0..steps {
        system.step()?;
        if system.is_empty() {
            break;
        }
    }
    let mut pop = system.population();
    pop.time = steps as f64 * dt;
    Ok(pop)
}

/// Total mass at `t_end` of the particle system without spatial motion.
pub fn simulate_total_mass(
    mech: &BranchingMechanism,
    resolution: usize,
    dt: f64,
    t_end: f64,
    stream: &RngStream,
) -> Result<f64, BranchingError> {
    let calibration = calibrate_particles(mech, resolution)?;
    let steps = step_count(dt, t_end)?;
    let law = calibration.step_law(dt);
    let cap = POPULATION_CAP_FACTOR * resolution;
    let mut rng = stream.rng();
    let mut count = resolution as u64;
    for k in 0..steps {
        count = (0..count).map(|_| law.sample(&mut rng)).sum();
        if count as usize > cap {
            return Err(BranchingError::PopulationExplosion { cap, time: (k + 1) as f64 * dt });
        }
        if count == 0 {
            break;
        }
    }
    Ok(count as f64 / resolution as f64)
}

/// Log-Laplace exponent of the total mass started from mass 1:
/// solution of `v' = a1 v - b1 v^2`, `v(0) = lambda`.
pub fn total_mass_log_laplace(a1: f64, b1: f64, lambda: f64, t: f64) -> f64 {
    if a1.abs() < 1e-14 {
        lambda / (1.0 + b1 * lambda * t)
    } else {
        let e = (a1 * t).exp();
        a1 * lambda * e / (a1 + b1 * lambda * (e - 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FellerReport {
    pub a1: f64,
    pub b1: f64,
    pub n_particles: usize,
    pub n_replicates: usize,
    pub dt: f64,
    pub t: f64,
    pub lambda: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub expected: f64,
    pub pass: bool,
}

/// Compare the empirical Laplace transform `E[exp(-lambda M_t)]` of the total
/// mass with `exp(-v(t))`; passes within three standard errors.
#[allow(clippy::too_many_arguments)]
pub fn feller_check(
    mech: &BranchingMechanism,
    resolution: usize,
    replicates: usize,
    dt: f64,
    t: f64,
    lambda: f64,
    seed: u64,
) -> Result<FellerReport, BranchingError> {
    let masses: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| simulate_total_mass(mech, resolution, dt, t, &RngStream::new(seed, k)))
        .collect::<Result<_, _>>()?;
    let samples: Vec<f64> = masses.iter().map(|m| (-lambda * m).exp()).collect();
    let (empirical, standard_error) = mean_and_standard_error(&samples);
    let expected = (-total_mass_log_laplace(mech.a1, mech.b1, lambda, t)).exp();
    Ok(FellerReport {
        a1: mech.a1,
        b1: mech.b1,
        n_particles: resolution,
        n_replicates: replicates,
        dt,
        t,
        lambda,
        empirical,
        standard_error,
        expected,
        pass: (empirical - expected).abs() <= 3.0 * standard_error,
    })
}

/// Sample mean and its standard error (0 for fewer than two samples).
pub fn mean_and_standard_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
