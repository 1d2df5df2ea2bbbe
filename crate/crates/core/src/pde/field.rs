use std::io::{self, Write};
use std::sync::Arc;

use super::mesh::TriMesh;
use crate::geometry::{angle_of, Point2};

/// Nodal values of a piecewise-linear function at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub mesh: Arc<TriMesh>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl ScalarField {
    pub fn new(mesh: Arc<TriMesh>, values: Vec<f64>, time: f64) -> Self {
        assert_eq!(mesh.n_nodes(), values.len(), "one value per node");
        Self { mesh, values, time }
    }

    pub fn from_fn<F: Fn(Point2) -> f64>(mesh: Arc<TriMesh>, f: F, time: f64) -> Self {
        let values = mesh.nodes.iter().map(|&p| f(p)).collect();
        Self { mesh, values, time }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn interpolate(&self, p: Point2) -> Option<f64> {
        self.mesh.interpolate(&self.values, p)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Field dump: `node_id,x1,x2,u`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node_id,x1,x2,u")?;
        for (i, (p, u)) in self.mesh.nodes.iter().zip(&self.values).enumerate() {
            writeln!(out, "{i},{:.16e},{:.16e},{:.16e}", p.x1, p.x2, u)?;
        }
        Ok(())
    }
}

/// Fields at increasing output times on a common mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub fields: Vec<ScalarField>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.time).collect()
    }

    pub fn last(&self) -> &ScalarField {
        self.fields.last().expect("trajectory is never empty")
    }

    /// Linear interpolation in time, clamped to the stored range.
    pub fn at(&self, t: f64) -> ScalarField {
        let fields = &self.fields;
        if t <= fields[0].time {
            return fields[0].clone();
        }
        let k = fields.iter().position(|f| f.time >= t).unwrap_or(fields.len() - 1);
        let hi = &fields[k];
        if hi.time <= t {
            return hi.clone();
        }
        let lo = &fields[k - 1];
        let w = (t - lo.time) / (hi.time - lo.time);
        let values = lo.values.iter().zip(&hi.values).map(|(a, b)| (1.0 - w) * a + w * b).collect();
        ScalarField::new(lo.mesh.clone(), values, t)
    }

    /// `u(t, p)` by linear interpolation in space and time.
    pub fn value(&self, t: f64, p: Point2) -> Option<f64> {
        self.at(t).interpolate(p)
    }
}

/// `1e-8 * range(u) / diam(D)`.
pub fn default_min_grad(field: &ScalarField) -> f64 {
    1e-8 * field.range() / field.mesh.domain_diameter
}

/// Per-element gradient angle, `None` where `|grad u| < min_grad`.
pub fn gradient_angles(field: &ScalarField, min_grad: f64) -> Vec<Option<f64>> {
    (0..field.mesh.n_elements())
        .map(|e| {
            let g = field.mesh.element_gradient(&field.values, e);
            if g.norm() < min_grad || g.norm() == 0.0 {
                None
            } else {
                angle_of(g).ok()
            }
        })
        .collect()
}
