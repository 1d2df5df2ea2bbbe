//! Finite element solver for `u_t = (1/2) Laplacian u + Phi(u)` with zero-flux
//! boundary conditions on a triangle, its mild-form Picard counterpart, and
//! gradient-angle extraction.

mod field;
mod mesh;
mod operator;
mod solver;

use thiserror::Error;

pub use field::{default_min_grad, gradient_angles, ScalarField, Trajectory};
pub use mesh::{refine_mesh, TriMesh};
pub use operator::{assemble_operator, BandCholesky, CsrMatrix, HeatPropagator, NeumannOperator};
pub use solver::{solve_mild_picard, solve_semilinear, OutputSchedule, PicardOutcome, Scheme, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("pde: mesh refinement needs a triangle, got {0} vertices")]
    NonTriangular(usize),
    #[error("pde: element {0} is degenerate")]
    DegenerateElement(usize),
    #[error("pde: explicit step dt = {dt} exceeds the stability bound {dt_max}")]
    StabilityViolation { dt: f64, dt_max: f64 },
    #[error("pde: non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("pde: initial data is negative at node {node} ({value})")]
    NegativeInitialData { node: usize, value: f64 },
    #[error("pde: Picard iteration diverged at iteration {iteration} (max norm {norm})")]
    PicardDiverged { iteration: usize, norm: f64 },
    #[error("pde: implicit system not positive definite at row {0}")]
    NotPositiveDefinite(usize),
    #[error("pde: {0}")]
    BadConfig(String),
}
