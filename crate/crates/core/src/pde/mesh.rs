use std::io::{self, Write};

use serde::Serialize;

use super::PdeError;
use crate::geometry::{Point2, PolygonalDomain};

/// Conforming triangulation from uniform midpoint refinement of a triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriMesh {
    pub nodes: Vec<Point2>,
    /// Counterclockwise node triples.
    pub elements: Vec<[usize; 3]>,
    pub refinement_level: u32,
    pub boundary: Vec<bool>,
    /// Largest element diameter.
    pub h: f64,
    /// Diameter of the meshed domain.
    pub domain_diameter: f64,
}

/// Uniform 4-way refinement of a triangular domain, `level` times.
///
/// Level `k` refinement equals the barycentric lattice with `2^k` subdivisions
/// per side, so nodes are generated directly on that lattice (row by row from
/// the first edge, which keeps the matrix bandwidth near `2^k`).
pub fn refine_mesh(domain: &PolygonalDomain, level: u32) -> Result<TriMesh, PdeError> {
    let v = domain.vertices();
    if v.len() != 3 {
        return Err(PdeError::NonTriangular(v.len()));
    }
    if level > 12 {
        return Err(PdeError::BadConfig(format!("refinement level {level} is too large")));
    }
    let (a, b, c) = (v[0], v[1], v[2]);
    let n = 1usize << level;
    let index = |i: usize, j: usize| j * (n + 1) - j * j.saturating_sub(1) / 2 + i;

    let mut nodes = Vec::with_capacity((n + 1) * (n + 2) / 2);
    let mut boundary = Vec::with_capacity(nodes.capacity());
    for j in 0..=n {
        for i in 0..=(n - j) {
            let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
            nodes.push(a + s * (b - a) + t * (c - a));
            boundary.push(i == 0 || j == 0 || i + j == n);
        }
    }
    debug_assert_eq!(index(0, n), nodes.len() - 1);

    let mut elements = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..(n - j) {
            elements.push([index(i, j), index(i + 1, j), index(i, j + 1)]);
            if i + j + 1 < n {
                elements.push([index(i + 1, j), index(i + 1, j + 1), index(i, j + 1)]);
            }
        }
    }
    let h = [a.dist(b), b.dist(c), c.dist(a)].into_iter().fold(0.0, f64::max) / n as f64;
    let mesh = TriMesh {
        nodes,
        elements,
        refinement_level: level,
        boundary,
        h,
        domain_diameter: domain.diameter(),
    };
    for e in 0..mesh.elements.len() {
        if mesh.element_area(e) <= 0.0 {
            return Err(PdeError::DegenerateElement(e));
        }
    }
    Ok(mesh)
}

impl TriMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// The three corners of the meshed triangle, counterclockwise.
    pub fn corners(&self) -> [Point2; 3] {
        let n = 1usize << self.refinement_level;
        [self.nodes[0], self.nodes[n], self.nodes[self.nodes.len() - 1]]
    }

    pub fn element_vertices(&self, e: usize) -> [Point2; 3] {
        let [i, j, k] = self.elements[e];
        [self.nodes[i], self.nodes[j], self.nodes[k]]
    }

    /// Signed area (positive for counterclockwise elements).
    pub fn element_area(&self, e: usize) -> f64 {
        let [p0, p1, p2] = self.element_vertices(e);
        0.5 * (p1 - p0).cross(p2 - p0)
    }

    pub fn element_centroid(&self, e: usize) -> Point2 {
        let [p0, p1, p2] = self.element_vertices(e);
        (1.0 / 3.0) * (p0 + p1 + p2)
    }

    /// Gradients of the three hat functions on element `e`.
    pub fn basis_gradients(&self, e: usize) -> [Point2; 3] {
        let [p0, p1, p2] = self.element_vertices(e);
        let two_area = (p1 - p0).cross(p2 - p0);
        let rot = |d: Point2| Point2::new(-d.x2 / two_area, d.x1 / two_area);
        // gradient of hat i is the inward-rotated opposite edge over 2|T|
        [rot(p2 - p1), rot(p0 - p2), rot(p1 - p0)]
    }

    /// Constant gradient of the piecewise-linear interpolant on element `e`.
    pub fn element_gradient(&self, values: &[f64], e: usize) -> Point2 {
        let g = self.basis_gradients(e);
        let [i, j, k] = self.elements[e];
        // differences against node i so a constant field has exactly zero gradient
        (values[j] - values[i]) * g[1] + (values[k] - values[i]) * g[2]
    }

    /// Element containing `p` and its barycentric coordinates.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = 1e-12;
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for e in 0..self.elements.len() {
            let [p0, p1, p2] = self.element_vertices(e);
            let two_area = (p1 - p0).cross(p2 - p0);
            let l1 = (p - p0).cross(p2 - p0) / two_area;
            let l2 = (p1 - p0).cross(p - p0) / two_area;
            let l0 = 1.0 - l1 - l2;
            let worst = l0.min(l1).min(l2);
            if worst >= -TOL {
                return Some((e, [l0, l1, l2]));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((e, [l0, l1, l2], worst));
            }
        }
        // points a rounding error outside the closure of the mesh
        best.filter(|b| b.2 >= -1e-9).map(|b| (b.0, b.1))
    }

    /// Value of the piecewise-linear interpolant at `p`.
    pub fn interpolate(&self, values: &[f64], p: Point2) -> Option<f64> {
        self.locate(p).map(|(e, l)| {
            let [i, j, k] = self.elements[e];
            l[0] * values[i] + l[1] * values[j] + l[2] * values[k]
        })
    }

    /// Mesh dump: `node_id,x1,x2,boundary`.
    pub fn write_nodes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "node_id,x1,x2,boundary")?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(out, "{i},{:.16e},{:.16e},{}", p.x1, p.x2, self.boundary[i])?;
        }
        Ok(())
    }

    /// Mesh dump: `element_id,n0,n1,n2`.
    pub fn write_elements_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "element_id,n0,n1,n2")?;
        for (e, [i, j, k]) in self.elements.iter().enumerate() {
            writeln!(out, "{e},{i},{j},{k}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_obtuse_triangle, ObtuseTriangleSpec};
    use std::collections::HashMap;
    use std::f64::consts::FRAC_PI_6;

    fn triangle() -> PolygonalDomain {
        build_obtuse_triangle(&ObtuseTriangleSpec { a: -FRAC_PI_6, b: FRAC_PI_6, base_length: 1.0 }).unwrap()
    }

    #[test]
    fn counts_follow_refinement() {
        let dom = triangle();
        let m0 = refine_mesh(&dom, 0).unwrap();
        assert_eq!((m0.n_elements(), m0.n_nodes()), (1, 3));
        let m1 = refine_mesh(&dom, 1).unwrap();
        assert_eq!((m1.n_elements(), m1.n_nodes()), (4, 6));
        let m4 = refine_mesh(&dom, 4).unwrap();
        // counting formula (2^k + 1)(2^k + 2)/2
        assert_eq!(m4.n_elements(), 256);
        assert_eq!(m4.n_nodes(), 17 * 18 / 2);
        assert_eq!(m4.n_nodes(), 153);
    }

    #[test]
    fn elements_tile_the_domain() {
        let dom = triangle();
        for level in 0..5 {
            let m = refine_mesh(&dom, level).unwrap();
            let total: f64 = (0..m.n_elements()).map(|e| m.element_area(e)).sum();
            assert!((total - dom.area()).abs() < 1e-14);
            assert!((0..m.n_elements()).all(|e| m.element_area(e) > 0.0));
        }
    }

    #[test]
    fn conforming_no_hanging_nodes() {
        // every interior edge is shared by exactly two elements, boundary edges by one
        let m = refine_mesh(&triangle(), 3).unwrap();
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for el in &m.elements {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for (&(a, b), &c) in &count {
            let on_boundary = m.boundary[a] && m.boundary[b] && {
                let mid = 0.5 * (m.nodes[a] + m.nodes[b]);
                triangle().contains(mid).signed_distance < 1e-12
            };
            assert_eq!(c, if on_boundary { 1 } else { 2 }, "edge {a}-{b}");
        }
        assert_eq!(m.boundary.iter().filter(|&&b| b).count(), 3 * 8);
    }

    #[test]
    fn rejects_non_triangles() {
        let square = PolygonalDomain::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ])
        .unwrap();
        assert!(matches!(refine_mesh(&square, 2), Err(PdeError::NonTriangular(4))));
    }

    #[test]
    fn interpolation_reproduces_linears() {
        let m = refine_mesh(&triangle(), 3).unwrap();
        let values: Vec<f64> = m.nodes.iter().map(|p| 2.0 * p.x1 - p.x2 + 0.5).collect();
        for p in [Point2::new(0.5, 0.1), Point2::new(0.01, 0.001), Point2::new(0.5, 0.288)] {
            let v = m.interpolate(&values, p).unwrap();
            assert!((v - (2.0 * p.x1 - p.x2 + 0.5)).abs() < 1e-12);
        }
        assert!(m.interpolate(&values, Point2::new(0.5, -0.1)).is_none());
        for e in 0..m.n_elements() {
            let g = m.element_gradient(&values, e);
            assert!((g.x1 - 2.0).abs() < 1e-10 && (g.x2 + 1.0).abs() < 1e-10);
        }
    }
}
