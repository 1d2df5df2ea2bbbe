//! Piecewise-linear Galerkin discretisation of `(1/2) Laplacian` with lumped
//! mass and natural (zero-flux) boundary conditions, plus the linear algebra
//! the time steppers need.

use serde::Serialize;

use super::mesh::TriMesh;
use super::PdeError;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(col, value)` lists; duplicates are summed in
    /// ascending column order.
    fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n).flat_map(|i| self.row(i).map(move |(c, _)| i.abs_diff(c))).max().unwrap_or(0)
    }
}

/// Discrete `(1/2) Laplacian` with natural boundary conditions.
///
/// `stiffness` is half the P1 stiffness matrix, `lumped_mass` the row-summed
/// mass matrix. The semi-discrete equation is `M u' = -A u + M Phi(u)`.
#[derive(Debug, Clone, Serialize)]
pub struct NeumannOperator {
    pub stiffness: CsrMatrix,
    pub lumped_mass: Vec<f64>,
    /// Explicit Euler stability bound `2 / lambda_max(M^-1 A)` (Gershgorin).
    pub dt_max: f64,
}

pub fn assemble_operator(mesh: &TriMesh) -> Result<NeumannOperator, PdeError> {
    let n = mesh.n_nodes();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut lumped_mass = vec![0.0; n];
    for e in 0..mesh.n_elements() {
        let area = mesh.element_area(e);
        if !(area > 1e-300) {
            return Err(PdeError::DegenerateElement(e));
        }
        let grads = mesh.basis_gradients(e);
        let nodes = mesh.elements[e];
        for a in 0..3 {
            lumped_mass[nodes[a]] += area / 3.0;
            for b in 0..3 {
                rows[nodes[a]].push((nodes[b], 0.5 * area * grads[a].dot(grads[b])));
            }
        }
    }
    let stiffness = CsrMatrix::from_rows(rows);
    let lambda_max = (0..n)
        .map(|i| stiffness.row(i).map(|(_, v)| v.abs()).sum::<f64>() / lumped_mass[i])
        .fold(0.0, f64::max);
    let dt_max = if lambda_max > 0.0 { 2.0 / lambda_max } else { f64::INFINITY };
    Ok(NeumannOperator { stiffness, lumped_mass, dt_max })
}

impl NeumannOperator {
    pub fn n(&self) -> usize {
        self.lumped_mass.len()
    }

    /// `L u = -M^-1 A u`, the discrete `(1/2) Laplacian` of `u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.stiffness.matvec(u, &mut out);
        for (o, m) in out.iter_mut().zip(&self.lumped_mass) {
            *o = -*o / m;
        }
        out
    }

    /// `sum_i m_i u_i`, the lumped-mass integral.
    pub fn mass_integral(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.lumped_mass).map(|(a, m)| a * m).sum()
    }
}

/// Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i - bw ..= i]`.
    lower: Vec<f64>,
}

impl BandCholesky {
    /// Factor `diag(d) + s * A` for a symmetric CSR matrix `A`.
    pub fn factor_shifted(a: &CsrMatrix, diag: &[f64], s: f64) -> Result<Self, PdeError> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut lower = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    lower[i * w + (j + bw - i)] += s * v;
                }
            }
            lower[i * w + bw] += diag[i];
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = lower[i * w + (j + bw - i)];
                for k in k0..j {
                    sum -= lower[i * w + (k + bw - i)] * lower[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(PdeError::NotPositiveDefinite(i));
                    }
                    lower[i * w + bw] = sum.sqrt();
                } else {
                    lower[i * w + (j + bw - i)] = sum / lower[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, lower })
    }

    /// Solve in place.
    pub fn solve(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut sum = x[i];
            for k in i.saturating_sub(bw)..i {
                sum -= self.lower[i * w + (k + bw - i)] * x[k];
            }
            x[i] = sum / self.lower[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut sum = x[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                sum -= self.lower[k * w + (i + bw - k)] * x[k];
            }
            x[i] = sum / self.lower[i * w + bw];
        }
    }
}

/// One step of the linear (heat) flow, `u -> P u`.
#[derive(Debug, Clone)]
pub enum HeatPropagator {
    /// `P = I - dt M^-1 A`.
    Explicit { op: NeumannOperator, dt: f64 },
    /// `P = (M + dt A)^-1 M`.
    Implicit { op: NeumannOperator, factor: BandCholesky },
}

impl HeatPropagator {
    pub fn explicit(op: NeumannOperator, dt: f64) -> Result<Self, PdeError> {
        if dt > op.dt_max {
            return Err(PdeError::StabilityViolation { dt, dt_max: op.dt_max });
        }
        Ok(Self::Explicit { op, dt })
    }

    pub fn implicit(op: NeumannOperator, dt: f64) -> Result<Self, PdeError> {
        let factor = BandCholesky::factor_shifted(&op.stiffness, &op.lumped_mass, dt)?;
        Ok(Self::Implicit { op, factor })
    }

    pub fn operator(&self) -> &NeumannOperator {
        match self {
            Self::Explicit { op, .. } | Self::Implicit { op, .. } => op,
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Self::Explicit { op, dt } => {
                let lu = op.apply(u);
                u.iter().zip(&lu).map(|(a, l)| a + dt * l).collect()
            }
            Self::Implicit { op, factor } => {
                let mut x: Vec<f64> = u.iter().zip(&op.lumped_mass).map(|(a, m)| a * m).collect();
                factor.solve(&mut x);
                x
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_obtuse_triangle, ObtuseTriangleSpec, Point2};
    use crate::pde::mesh::refine_mesh;

    fn mesh(a: f64, b: f64, level: u32) -> TriMesh {
        let dom = build_obtuse_triangle(&ObtuseTriangleSpec { a, b, base_length: 1.0 }).unwrap();
        refine_mesh(&dom, level).unwrap()
    }

    #[test]
    fn constants_are_in_the_null_space() {
        let m = mesh(-0.5, 0.3, 3);
        let op = assemble_operator(&m).unwrap();
        let out = op.apply(&vec![2.5; m.n_nodes()]);
        assert!(out.iter().all(|v| v.abs() < 1e-10), "{:?}", out.iter().cloned().fold(0.0, f64::max));
        for i in 0..m.n_nodes() {
            let row_sum: f64 = op.stiffness.row(i).map(|(_, v)| v).sum();
            assert!(row_sum.abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_is_symmetric_and_mass_sums_to_area() {
        let m = mesh(-0.5, 0.3, 3);
        let op = assemble_operator(&m).unwrap();
        for i in 0..m.n_nodes() {
            for (j, v) in op.stiffness.row(i) {
                assert!((v - op.stiffness.get(j, i)).abs() < 1e-14);
            }
        }
        let area: f64 = op.lumped_mass.iter().sum();
        let exact = (0..m.n_elements()).map(|e| m.element_area(e)).sum::<f64>();
        assert!((area - exact).abs() < 1e-14);
    }

    #[test]
    fn linear_fields_have_zero_interior_residual() {
        let m = mesh(-std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_6, 3);
        let op = assemble_operator(&m).unwrap();
        let u: Vec<f64> = m.nodes.iter().map(|p| p.x1).collect();
        let mut au = vec![0.0; u.len()];
        op.stiffness.matvec(&u, &mut au);
        for i in 0..m.n_nodes() {
            if !m.boundary[i] {
                assert!(au[i].abs() < 1e-12, "node {i}: {}", au[i]);
            }
        }
        // the boundary rows carry the flux: total equals -(1/2) of the boundary integral of du/dn
        let boundary_flux: f64 = au.iter().sum();
        assert!(boundary_flux.abs() < 1e-12);
        assert!((0..m.n_nodes()).any(|i| m.boundary[i] && au[i].abs() > 1e-6));
    }

    #[test]
    fn mirror_symmetric_field_gives_symmetric_output() {
        let m = mesh(-0.4, 0.4, 4);
        let op = assemble_operator(&m).unwrap();
        let f = |p: Point2| (p.x1 - 0.5).powi(2) + p.x2;
        let u: Vec<f64> = m.nodes.iter().map(|&p| f(p)).collect();
        let out = op.apply(&u);
        for (i, p) in m.nodes.iter().enumerate() {
            let mirror = Point2::new(1.0 - p.x1, p.x2);
            let j = m.nodes.iter().position(|q| q.dist(mirror) < 1e-12).expect("mirror node");
            assert!((out[i] - out[j]).abs() < 1e-9 * out[i].abs().max(1.0));
        }
    }

    #[test]
    fn band_cholesky_solves_shifted_system() {
        let m = mesh(-0.5, 0.3, 3);
        let op = assemble_operator(&m).unwrap();
        let dt = 0.01;
        let f = BandCholesky::factor_shifted(&op.stiffness, &op.lumped_mass, dt).unwrap();
        let x_true: Vec<f64> = (0..m.n_nodes()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; x_true.len()];
        op.stiffness.matvec(&x_true, &mut b);
        for i in 0..b.len() {
            b[i] = dt * b[i] + op.lumped_mass[i] * x_true[i];
        }
        f.solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert!((x - t).abs() < 1e-10);
        }
    }

    #[test]
    fn explicit_step_respects_bound() {
        let m = mesh(-0.5, 0.3, 3);
        let op = assemble_operator(&m).unwrap();
        let dt_max = op.dt_max;
        assert!(dt_max > 0.0 && dt_max.is_finite());
        assert!(matches!(
            HeatPropagator::explicit(op.clone(), 2.0 * dt_max),
            Err(PdeError::StabilityViolation { .. })
        ));
        assert!(HeatPropagator::explicit(op, 0.5 * dt_max).is_ok());
    }
}
