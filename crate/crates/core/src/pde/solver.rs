use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::field::{ScalarField, Trajectory};
use super::mesh::TriMesh;
use super::operator::{assemble_operator, HeatPropagator};
use super::PdeError;
use crate::branching::BranchingMechanism;

/// Treatment of the diffusion term; the reaction is always explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    #[default]
    Imex,
}

/// Which times to store. `t = 0` and `t_end` are always included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputSchedule {
    /// `intervals` equal intervals.
    Uniform { intervals: usize },
    /// `count` times geometrically spaced from `first` to `t_end`.
    Geometric { count: usize, first: f64 },
}

impl Default for OutputSchedule {
    fn default() -> Self {
        Self::Uniform { intervals: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default)]
    pub outputs: OutputSchedule,
}

fn default_picard_tol() -> f64 {
    1e-10
}

fn default_picard_max_iter() -> usize {
    100
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, scheme: Scheme) -> Self {
        Self {
            dt,
            t_end,
            scheme,
            picard_tol: default_picard_tol(),
            picard_max_iter: default_picard_max_iter(),
            outputs: OutputSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(PdeError::BadConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(PdeError::BadConfig(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if !(self.picard_tol > 0.0) {
            return Err(PdeError::BadConfig(format!("picard_tol must be positive, got {}", self.picard_tol)));
        }
        if self.picard_max_iter == 0 {
            return Err(PdeError::BadConfig("picard_max_iter must be at least 1".into()));
        }
        match self.outputs {
            OutputSchedule::Uniform { intervals: 0 } => {
                Err(PdeError::BadConfig("uniform output schedule needs at least one interval".into()))
            }
            OutputSchedule::Geometric { count, first } if count < 2 || !(first > 0.0) => Err(PdeError::BadConfig(
                "geometric output schedule needs count >= 2 and first > 0".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Number of time steps; `t_end` must be a whole number of steps.
    pub fn steps(&self) -> Result<usize, PdeError> {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(PdeError::BadConfig(format!(
                "t_end = {} is not a multiple of dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }

    /// Sorted step indices at which fields are stored.
    pub fn output_steps(&self) -> Result<Vec<usize>, PdeError> {
        let total = self.steps()?;
        let mut steps = vec![0, total];
        match self.outputs {
            OutputSchedule::Uniform { intervals } => {
                steps.extend((1..intervals).map(|k| (k as f64 * total as f64 / intervals as f64).round() as usize));
            }
            OutputSchedule::Geometric { count, first } => {
                let ratio = (self.t_end / first).max(1.0);
                for k in 0..count {
                    let t = first * ratio.powf(k as f64 / (count - 1) as f64);
                    steps.push(((t / self.dt).round() as usize).min(total));
                }
            }
        }
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }

    fn propagator(&self, mesh: &TriMesh) -> Result<HeatPropagator, PdeError> {
        let op = assemble_operator(mesh)?;
        match self.scheme {
            Scheme::Explicit => HeatPropagator::explicit(op, self.dt),
            Scheme::Imex => HeatPropagator::implicit(op, self.dt),
        }
    }
}

fn check_initial(phi0: &ScalarField) -> Result<(), PdeError> {
    for (node, &value) in phi0.values.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(PdeError::NegativeInitialData { node, value });
        }
    }
    Ok(())
}

fn check_finite(u: &[f64], step: usize) -> Result<(), PdeError> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(PdeError::NonFinite { step })
    }
}

/// Time-step the semilinear equation from `phi0`.
///
/// Explicit: `u + dt (L u + Phi(u))`. IMEX: `(M + dt A)^-1 M (u + dt Phi(u))`.
pub fn solve_semilinear(
    mesh: &Arc<TriMesh>,
    phi0: &ScalarField,
    mech: &BranchingMechanism,
    cfg: &SolverConfig,
) -> Result<Trajectory, PdeError> {
    cfg.validate()?;
    check_initial(phi0)?;
    let outputs = cfg.output_steps()?;
    let total = *outputs.last().unwrap();
    let prop = cfg.propagator(mesh)?;
    let dt = cfg.dt;

    let mut u = phi0.values.clone();
    let mut fields = vec![ScalarField::new(mesh.clone(), u.clone(), 0.0)];
    let mut next_output = 1;
    for step in 1..=total {
        u = match cfg.scheme {
            Scheme::Explicit => {
                let pu = prop.apply(&u);
                pu.iter().zip(&u).map(|(p, &v)| p + dt * mech.reaction(v)).collect()
            }
            Scheme::Imex => {
                let rhs: Vec<f64> = u.iter().map(|&v| v + dt * mech.reaction(v)).collect();
                prop.apply(&rhs)
            }
        };
        check_finite(&u, step)?;
        if next_output < outputs.len() && outputs[next_output] == step {
            fields.push(ScalarField::new(mesh.clone(), u.clone(), step as f64 * dt));
            next_output += 1;
        }
    }
    Ok(Trajectory { fields })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome {
    pub field: ScalarField,
    pub iterations: usize,
    /// Max-norm change of the last iteration.
    pub last_increment: f64,
    pub converged: bool,
}

/// Fixed-point iteration for the mild form
/// `v(t) = S_t phi + int_0^t S_{t-s} Phi(v(s)) ds` on the `dt` grid.
///
/// `S_dt` is the linear propagator of `cfg.scheme` and the time integral the
/// trapezoid rule. Stops when successive iterates differ by less than
/// `picard_tol` in max-norm over the whole grid, or after `picard_max_iter`.
pub fn solve_mild_picard(
    mesh: &Arc<TriMesh>,
    phi0: &ScalarField,
    mech: &BranchingMechanism,
    cfg: &SolverConfig,
) -> Result<PicardOutcome, PdeError> {
    cfg.validate()?;
    check_initial(phi0)?;
    let total = cfg.steps()?;
    let prop = cfg.propagator(mesh)?;
    let dt = cfg.dt;
    let n = mesh.n_nodes();
    let init_norm = phi0.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let blowup = 10.0 * init_norm.max(f64::MIN_POSITIVE);

    // free evolution S_{k dt} phi
    let mut free = Vec::with_capacity(total + 1);
    free.push(phi0.values.clone());
    for step in 1..=total {
        let next = prop.apply(&free[step - 1]);
        check_finite(&next, step)?;
        free.push(next);
    }

    let mut v = free.clone();
    let mut last_increment = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.picard_max_iter {
        iterations += 1;
        // R_k = sum_{j<k} c_j S_{(k-j) dt} g_j with c_0 = 1/2, c_j = 1
        let g: Vec<Vec<f64>> = v.iter().map(|vk| vk.iter().map(|&x| mech.reaction(x)).collect()).collect();
        let mut next = Vec::with_capacity(total + 1);
        next.push(phi0.values.clone());
        let mut r = vec![0.0; n];
        let mut increment = 0.0f64;
        let mut norm = 0.0f64;
        for k in 1..=total {
            let c = if k == 1 { 0.5 } else { 1.0 };
            let acc: Vec<f64> = r.iter().zip(&g[k - 1]).map(|(a, b)| a + c * b).collect();
            r = prop.apply(&acc);
            let vk: Vec<f64> = (0..n).map(|i| free[k][i] + dt * (r[i] + 0.5 * g[k][i])).collect();
            check_finite(&vk, k)?;
            for i in 0..n {
                increment = increment.max((vk[i] - v[k][i]).abs());
                norm = norm.max(vk[i].abs());
            }
            next.push(vk);
        }
        if norm > blowup {
            return Err(PdeError::PicardDiverged { iteration: iterations, norm });
        }
        v = next;
        last_increment = increment;
        if increment < cfg.picard_tol {
            break;
        }
    }
    let field = ScalarField::new(mesh.clone(), v.pop().unwrap(), total as f64 * dt);
    Ok(PicardOutcome { field, iterations, last_increment, converged: last_increment < cfg.picard_tol })
}
