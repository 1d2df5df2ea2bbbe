//! Numerical laboratory for semilinear parabolic equations with Neumann
//! boundary conditions on polygonal domains, synchronous couplings of
//! reflected Brownian motions, and coupled branching particle systems.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod branching;
pub mod cli;
pub mod geometry;
pub mod pde;
pub mod reflected_motion;
pub mod rng;
pub mod verify;
