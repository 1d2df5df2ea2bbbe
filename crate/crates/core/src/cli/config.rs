//! Scenario configuration.
//!
//! A scenario is one JSON document. Only `seed`, `domain`, `initial_data`,
//! `theorem`, `solver` and `simulation` are required:
//!
//! ```json
//! {
//!   "seed": 20240601,
//!   "domain": { "a": -0.5235987755982988, "b": 0.5235987755982988, "base_length": 1.0 },
//!   "mechanism": { "a1": 0.0, "b1": 1.0, "nu": { "kind": "none" } },
//!   "initial_data": { "kind": "x1" },
//!   "theorem": { "c": -0.7853981633974483, "d": 0.7853981633974483 },
//!   "mesh": { "level": 5 },
//!   "solver": { "dt": 1e-4, "t_end": 0.5, "scheme": "imex",
//!               "picard_tol": 1e-10, "picard_max_iter": 100,
//!               "outputs": { "kind": "uniform", "intervals": 5 } },
//!   "simulation": { "n_particles": 500, "n_replicates": 100, "dt": 1e-4, "t_end": 0.25,
//!                   "n_outputs": 10, "x": { "x1": 0.3, "x2": 0.1 }, "y": { "x1": 0.5, "x2": 0.1 },
//!                   "rel_tol": 0.05 },
//!   "cone": { "slack": null, "min_grad": null, "n_lines": 8, "n_samples": 50 },
//!   "calibration": { "betas": [0.25, 0.5, 0.75], "lambdas": [0.5, 1.0, 2.0],
//!                    "n_particles": 1000, "n_replicates": 400, "dt": 1e-3, "t": 0.5, "lambda": 1.0 },
//!   "plot": { "histogram_bins": 64, "series_replicates": 10,
//!             "transect_slices": [0.1, 0.25, 0.5], "transect_points": 101 },
//!   "output_dir": "out"
//! }
//! ```
//!
//! Initial data kinds: `x1`, `x1_plus_x2`, `constant` (`c`), `gaussian_bump`
//! (`center`, `width`) and `linear` (`g1`, `g2`, `offset`, meaning
//! `g1 x1 + g2 x2 + offset`). Mechanism jump parts: `none`, `stable_tail`
//! (`c1`, `beta`) and `atoms` (list of `[u, weight]`). Output schedules:
//! `uniform` (`intervals`) and `geometric` (`count`, `first`).

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::branching::BranchingMechanism;
use crate::geometry::{build_obtuse_triangle, ObtuseTriangleSpec, Point2, PolygonalDomain};
use crate::pde::SolverConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    X1,
    X1PlusX2,
    Constant { c: f64 },
    GaussianBump { center: Point2, width: f64 },
    Linear { g1: f64, g2: f64, offset: f64 },
}

impl InitialData {
    pub fn eval(&self, p: Point2) -> f64 {
        match *self {
            Self::X1 => p.x1,
            Self::X1PlusX2 => p.x1 + p.x2,
            Self::Constant { c } => c,
            Self::GaussianBump { center, width } => (-(p - center).dot(p - center) / (2.0 * width * width)).exp(),
            Self::Linear { g1, g2, offset } => g1 * p.x1 + g2 * p.x2 + offset,
        }
    }

    /// Whether the function has no spatial dependence.
    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. } | Self::Linear { g1: 0.0, g2: 0.0, .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremAngles {
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub level: u32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { level: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_particles: usize,
    pub n_replicates: usize,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "default_n_outputs")]
    pub n_outputs: usize,
    pub x: Point2,
    pub y: Point2,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_n_outputs() -> usize {
    10
}

fn default_rel_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeConfig {
    /// Angular slack; `None` means twice the mesh size.
    #[serde(default)]
    pub slack: Option<f64>,
    /// Gradient mask; `None` means `1e-8 * range(u) / diam(D)` per field.
    #[serde(default)]
    pub min_grad: Option<f64>,
    #[serde(default = "default_n_lines")]
    pub n_lines: usize,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

fn default_n_lines() -> usize {
    8
}

fn default_n_samples() -> usize {
    50
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self { slack: None, min_grad: None, n_lines: default_n_lines(), n_samples: default_n_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub n_particles: usize,
    pub n_replicates: usize,
    pub dt: f64,
    pub t: f64,
    pub lambda: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.25, 0.5, 0.75],
            lambdas: vec![0.5, 1.0, 2.0],
            n_particles: 1000,
            n_replicates: 400,
            dt: 1e-3,
            t: 0.5,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub histogram_bins: usize,
    /// Replicates written to the K-angle series.
    pub series_replicates: usize,
    /// Transect heights as fractions of the apex height.
    pub transect_slices: Vec<f64>,
    pub transect_points: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { histogram_bins: 64, series_replicates: 10, transect_slices: vec![0.1, 0.25, 0.5], transect_points: 101 }
    }
}

fn default_mechanism() -> BranchingMechanism {
    BranchingMechanism { a1: 0.0, b1: 1.0, nu: Default::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub schema_version: Option<u32>,
    pub seed: u64,
    pub domain: ObtuseTriangleSpec,
    #[serde(default = "default_mechanism")]
    pub mechanism: BranchingMechanism,
    pub initial_data: InitialData,
    pub theorem: TheoremAngles,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub cone: ConeConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub plot: PlotConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn build_domain(&self) -> Result<PolygonalDomain, CliError> {
        Ok(build_obtuse_triangle(&self.domain)?)
    }

    /// Checks every subcommand relies on. Hypotheses specific to the theorem
    /// (gradient cone of the initial data) are checked by the commands that
    /// need them.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                return Err(CliError::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")));
            }
        }
        let domain = self.build_domain()?;
        self.mechanism.validate()?;
        self.solver.validate()?;
        self.solver.steps()?;
        if self.mesh.level > 9 {
            return Err(CliError::Config(format!("mesh level {} is above the supported maximum 9", self.mesh.level)));
        }
        let sim = &self.simulation;
        if sim.n_particles == 0 || sim.n_replicates == 0 {
            return Err(CliError::Config("simulation needs n_particles > 0 and n_replicates > 0".into()));
        }
        if !(sim.dt > 0.0 && sim.t_end >= 0.0 && sim.rel_tol >= 0.0) {
            return Err(CliError::Config("simulation needs dt > 0, t_end >= 0 and rel_tol >= 0".into()));
        }
        for (name, p) in [("x", sim.x), ("y", sim.y)] {
            if !domain.is_inside(p) {
                return Err(CliError::Config(format!("simulation start point {name} = {p} is outside the domain")));
            }
        }
        if let InitialData::GaussianBump { width, .. } = self.initial_data {
            if !(width > 0.0 && width.is_finite()) {
                return Err(CliError::Config(format!("gaussian bump width must be positive, got {width}")));
            }
        }
        check_initial_data(&domain, &self.initial_data, self.seed)?;
        Ok(())
    }
}

/// Nonnegativity at the domain corners and at sampled points, and a
/// continuity check on sampled finite-difference gradients.
fn check_initial_data(domain: &PolygonalDomain, phi: &InitialData, seed: u64) -> Result<(), CliError> {
    let v = domain.vertices();
    let (lo1, hi1) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x1), b.max(p.x1)));
    let (lo2, hi2) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x2), b.max(p.x2)));
    let h = 1e-6 * domain.diameter();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D1D);
    let mut points: Vec<Point2> = v.to_vec();
    while points.len() < 200 + v.len() {
        let p = Point2::new(rng.random_range(lo1..hi1), rng.random_range(lo2..hi2));
        if domain.contains(p).signed_distance > 20.0 * h {
            points.push(p);
        }
    }
    let grad = |p: Point2, s: f64| {
        Point2::new(
            (phi.eval(p + Point2::new(s, 0.0)) - phi.eval(p - Point2::new(s, 0.0))) / (2.0 * s),
            (phi.eval(p + Point2::new(0.0, s)) - phi.eval(p - Point2::new(0.0, s))) / (2.0 * s),
        )
    };
    for (i, &p) in points.iter().enumerate() {
        let value = phi.eval(p);
        if !(value >= 0.0 && value.is_finite()) {
            return Err(CliError::Config(format!("initial data must be nonnegative, got {value} at {p}")));
        }
        if i >= v.len() {
            let (g1, g2) = (grad(p, h), grad(p, 10.0 * h));
            if (g1 - g2).norm() > 1e-3 * (1.0 + g1.norm()) {
                return Err(CliError::Config(format!("initial data does not look continuously differentiable at {p}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn canonical_json() -> String {
        r#"{
            "seed": 7,
            "domain": { "a": -0.5235987755982988, "b": 0.5235987755982988, "base_length": 1.0 },
            "initial_data": { "kind": "x1" },
            "theorem": { "c": -0.7853981633974483, "d": 0.7853981633974483 },
            "mesh": { "level": 3 },
            "solver": { "dt": 1e-3, "t_end": 0.1 },
            "simulation": { "n_particles": 20, "n_replicates": 4, "dt": 1e-3, "t_end": 0.05,
                            "x": { "x1": 0.3, "x2": 0.1 }, "y": { "x1": 0.5, "x2": 0.1 } }
        }"#
        .to_string()
    }

    #[test]
    fn parses_with_defaults() {
        let s = Scenario::from_json(&canonical_json()).unwrap();
        assert_eq!(s.mechanism, BranchingMechanism::binary(0.0, 1.0).unwrap());
        assert_eq!(s.cone, ConeConfig::default());
        assert_eq!(s.simulation.n_outputs, 10);
    }

    #[test]
    fn seed_is_mandatory() {
        let text = canonical_json().replace("\"seed\": 7,", "");
        assert!(matches!(Scenario::from_json(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = canonical_json().replace("\"seed\": 7,", "\"seed\": 7, \"sead\": 1,");
        assert!(Scenario::from_json(&text).is_err());
    }

    #[test]
    fn negative_initial_data_is_rejected() {
        let text = canonical_json().replace(r#"{ "kind": "x1" }"#, r#"{ "kind": "linear", "g1": -1.0, "g2": 0.0, "offset": 0.0 }"#);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("nonnegative"), "{err}");
    }

    #[test]
    fn catalogue_values() {
        let p = Point2::new(0.3, 0.2);
        assert_eq!(InitialData::X1.eval(p), 0.3);
        assert!((InitialData::X1PlusX2.eval(p) - 0.5).abs() < 1e-15);
        assert_eq!(InitialData::Constant { c: 2.0 }.eval(p), 2.0);
        assert_eq!(InitialData::GaussianBump { center: p, width: 0.1 }.eval(p), 1.0);
        assert!(InitialData::Constant { c: 2.0 }.is_constant());
        assert!(!InitialData::X1.is_constant());
    }
}
