//! Continuous piecewise-quadratic Lagrange space on a [`Mesh`].
//!
//! Local node order on a triangle `[a, b, c]` is the three vertices followed by
//! the midpoints of edges `ab`, `bc`, `ca`. This is also the VTK
//! quadratic-triangle ordering, so snapshots export without reindexing.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Values, gradients and Hessians of the six local basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisEval {
    pub values: [f64; 6],
    pub grads: [Vec2; 6],
    pub hessians: [Mat2; 6],
}

/// Midpoint node `3 + k` sits between local vertices `EDGE_NODES[k]`.
pub const EDGE_NODES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// P2 basis in terms of barycentric coordinates and their (constant) gradients.
pub fn basis_from_barycentric(l: [f64; 3], gl: [Vec2; 3]) -> BasisEval {
    let mut values = [0.0; 6];
    let mut grads = [[0.0; 2]; 6];
    let mut hessians = [[[0.0; 2]; 2]; 6];
    let outer = |a: Vec2, b: Vec2| -> Mat2 { [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]] };
    for v in 0..3 {
        values[v] = l[v] * (2.0 * l[v] - 1.0);
        let s = 4.0 * l[v] - 1.0;
        grads[v] = [s * gl[v][0], s * gl[v][1]];
        let o = outer(gl[v], gl[v]);
        hessians[v] = [[4.0 * o[0][0], 4.0 * o[0][1]], [4.0 * o[1][0], 4.0 * o[1][1]]];
    }
    for (k, &[i, j]) in EDGE_NODES.iter().enumerate() {
        values[3 + k] = 4.0 * l[i] * l[j];
        grads[3 + k] = [
            4.0 * (l[j] * gl[i][0] + l[i] * gl[j][0]),
            4.0 * (l[j] * gl[i][1] + l[i] * gl[j][1]),
        ];
        let (a, b) = (outer(gl[i], gl[j]), outer(gl[j], gl[i]));
        hessians[3 + k] = [
            [4.0 * (a[0][0] + b[0][0]), 4.0 * (a[0][1] + b[0][1])],
            [4.0 * (a[1][0] + b[1][0]), 4.0 * (a[1][1] + b[1][1])],
        ];
    }
    BasisEval {
        values,
        grads,
        hessians,
    }
}

/// Basis on the reference triangle with vertices `(0,0), (1,0), (0,1)`.
pub fn eval_basis(xi: f64, eta: f64) -> BasisEval {
    basis_from_barycentric([1.0 - xi - eta, xi, eta], [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
}

/// Affine data of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    pub area: f64,
    pub grad_lambda: [Vec2; 3],
}

impl ElementGeometry {
    pub fn new(vertices: [Point; 3]) -> Self {
        let [a, b, c] = vertices;
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let grad_lambda = [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ];
        ElementGeometry {
            vertices,
            area: 0.5 * det,
            grad_lambda,
        }
    }

    /// Physical point of reference coordinates `(xi, eta)`.
    pub fn map(&self, r: &[f64; 2]) -> Point {
        let [a, b, c] = self.vertices;
        [
            a[0] + r[0] * (b[0] - a[0]) + r[1] * (c[0] - a[0]),
            a[1] + r[0] * (b[1] - a[1]) + r[1] * (c[1] - a[1]),
        ]
    }

    pub fn barycentric(&self, p: Point) -> [f64; 3] {
        let a = self.vertices[0];
        let g = self.grad_lambda;
        let d = [p[0] - a[0], p[1] - a[1]];
        let l1 = g[1][0] * d[0] + g[1][1] * d[1];
        let l2 = g[2][0] * d[0] + g[2][1] * d[1];
        [1.0 - l1 - l2, l1, l2]
    }

    /// Basis with physical gradients and Hessians at barycentric point `l`.
    pub fn basis(&self, l: [f64; 3]) -> BasisEval {
        basis_from_barycentric(l, self.grad_lambda)
    }

    pub fn basis_at_reference(&self, r: &[f64; 2]) -> BasisEval {
        self.basis([1.0 - r[0] - r[1], r[0], r[1]])
    }
}

/// Coefficient vector of a function in the space.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Field { coeffs: vec![0.0; n] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Field { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// The quadratic Lagrange space: mesh, degree-of-freedom map and node coordinates.
#[derive(Debug, Clone)]
pub struct Space {
    mesh: Arc<Mesh>,
    dofs: Vec<[usize; 6]>,
    nodes: Vec<Point>,
    geometry: Vec<ElementGeometry>,
    /// `(2n + 1)^2` lattice of node positions at spacing `1 / 2n`.
    lattice: Vec<usize>,
}

impl Space {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let nv = mesh.vertices().len();
        let mut nodes: Vec<Point> = mesh.vertices().to_vec();
        for e in mesh.edges() {
            let (a, b) = (mesh.vertices()[e.vertices[0]], mesh.vertices()[e.vertices[1]]);
            nodes.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        }
        let dofs = mesh
            .triangles()
            .iter()
            .zip(mesh.triangle_edges())
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();
        let geometry = (0..mesh.triangles().len())
            .map(|t| ElementGeometry::new(mesh.triangle_vertices(t)))
            .collect();
        let side = 2 * mesh.n() + 1;
        let mut lattice = vec![usize::MAX; side * side];
        for (d, p) in nodes.iter().enumerate() {
            let a = (p[0] * (2 * mesh.n()) as f64).round() as usize;
            let b = (p[1] * (2 * mesh.n()) as f64).round() as usize;
            lattice[b * side + a] = d;
        }
        debug_assert!(lattice.iter().all(|&d| d != usize::MAX));
        Space {
            mesh,
            dofs,
            nodes,
            geometry,
            lattice,
        }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Ok(Space::new(Arc::new(Mesh::build_uniform(n)?)))
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes.len()
    }

    /// Global indices of the six local nodes of triangle `t`.
    pub fn element_dofs(&self, t: usize) -> &[usize; 6] {
        &self.dofs[t]
    }

    pub fn dofmap(&self) -> &[[usize; 6]] {
        &self.dofs
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    /// The degree of freedom located exactly at `p`, if any.
    pub fn node_at(&self, p: Point) -> Option<usize> {
        let m = (2 * self.mesh.n()) as f64;
        let (a, b) = (p[0] * m, p[1] * m);
        let (ra, rb) = (a.round(), b.round());
        if (a - ra).abs() > 1e-9 || (b - rb).abs() > 1e-9 || ra < 0.0 || rb < 0.0 || ra > m || rb > m {
            return None;
        }
        let side = 2 * self.mesh.n() + 1;
        Some(self.lattice[rb as usize * side + ra as usize])
    }

    pub fn zero_field(&self) -> Field {
        Field::zeros(self.n_dofs())
    }

    pub fn constant_field(&self, c: f64) -> Field {
        Field::from_coeffs(vec![c; self.n_dofs()])
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(Point) -> f64) -> Field {
        Field::from_coeffs(self.nodes.iter().map(|&p| f(p)).collect())
    }

    pub fn check_field(&self, field: &Field) -> Result<()> {
        if field.len() != self.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_dofs(),
                got: field.len(),
            });
        }
        Ok(())
    }

    /// Local coefficients of `field` on triangle `t`.
    pub fn local(&self, field: &Field, t: usize) -> [f64; 6] {
        let d = &self.dofs[t];
        let c = field.coeffs();
        [c[d[0]], c[d[1]], c[d[2]], c[d[3]], c[d[4]], c[d[5]]]
    }

    pub fn evaluate(&self, field: &Field, p: Point) -> Result<f64> {
        self.check_field(field)?;
        let t = self.mesh.locate(p)?;
        let b = self.geometry[t].basis(self.geometry[t].barycentric(p));
        let u = self.local(field, t);
        Ok((0..6).map(|k| u[k] * b.values[k]).sum())
    }

    /// Gradient of the restriction of `field` to the triangle containing `p`.
    pub fn evaluate_gradient(&self, field: &Field, p: Point) -> Result<Vec2> {
        self.check_field(field)?;
        let t = self.mesh.locate(p)?;
        let b = self.geometry[t].basis(self.geometry[t].barycentric(p));
        let u = self.local(field, t);
        let mut g = [0.0; 2];
        for k in 0..6 {
            g[0] += u[k] * b.grads[k][0];
            g[1] += u[k] * b.grads[k][1];
        }
        Ok(g)
    }

    /// Legacy ASCII VTK on the P2 node cloud with quadratic triangle cells.
    pub fn write_vtk<W: Write>(&self, mut w: W, title: &str, fields: &[(&str, &Field)]) -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{}", title.replace('\n', " "))?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
        }
        writeln!(w, "CELLS {} {}", self.dofs.len(), 7 * self.dofs.len())?;
        for d in &self.dofs {
            writeln!(w, "6 {} {} {} {} {} {}", d[0], d[1], d[2], d[3], d[4], d[5])?;
        }
        writeln!(w, "CELL_TYPES {}", self.dofs.len())?;
        for _ in &self.dofs {
            writeln!(w, "22")?;
        }
        writeln!(w, "POINT_DATA {}", self.nodes.len())?;
        for (name, f) in fields {
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in f.coeffs() {
                writeln!(w, "{v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Flat `dof_index,x,y,value` table.
    pub fn write_csv<W: Write>(&self, mut w: W, field: &Field) -> std::io::Result<()> {
        writeln!(w, "dof_index,x,y,value")?;
        for (d, (p, v)) in self.nodes.iter().zip(field.coeffs()).enumerate() {
            writeln!(w, "{d},{:.17e},{:.17e},{v:.17e}", p[0], p[1])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TriangleRule;

    const REF_NODES: [[f64; 2]; 6] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]];

    #[test]
    fn nodal_basis_is_kronecker() {
        for (j, p) in REF_NODES.iter().enumerate() {
            let b = eval_basis(p[0], p[1]);
            for i in 0..6 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((b.values[i] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn partition_of_unity_and_derivatives() {
        for &(x, y) in &[(0.1, 0.2), (0.3, 0.3), (0.7, 0.05), (0.0, 0.9)] {
            let b = eval_basis(x, y);
            assert!((b.values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            let gs = b.grads.iter().fold([0.0, 0.0], |s, g| [s[0] + g[0], s[1] + g[1]]);
            assert!(gs[0].abs() < 1e-14 && gs[1].abs() < 1e-14);
            // gradients match central differences
            let d = 1e-6;
            let (bp, bm) = (eval_basis(x + d, y), eval_basis(x - d, y));
            for i in 0..6 {
                let fd = (bp.values[i] - bm.values[i]) / (2.0 * d);
                assert!((fd - b.grads[i][0]).abs() < 1e-8);
                let hd = (bp.grads[i][1] - bm.grads[i][1]) / (2.0 * d);
                assert!((hd - b.hessians[i][0][1]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn hessians_reproduce_quadratics() {
        let space = Space::uniform(3).unwrap();
        let f = space.interpolate(|p| p[0] * p[0]);
        for t in 0..space.mesh().triangles().len() {
            let g = space.geometry(t);
            let b = g.basis([0.2, 0.3, 0.5]);
            let u = space.local(&f, t);
            let mut h = [[0.0; 2]; 2];
            for k in 0..6 {
                for r in 0..2 {
                    for c in 0..2 {
                        h[r][c] += u[k] * b.hessians[k][r][c];
                    }
                }
            }
            assert!((h[0][0] - 2.0).abs() < 1e-10 && h[0][1].abs() < 1e-10 && h[1][1].abs() < 1e-10);
        }
    }

    #[test]
    fn dof_count_and_continuity() {
        for n in [2, 4, 7] {
            let space = Space::uniform(n).unwrap();
            assert_eq!(space.n_dofs(), (2 * n + 1) * (2 * n + 1));
            // each local node's geometric position agrees with the global node
            for t in 0..space.mesh().triangles().len() {
                let g = space.geometry(t);
                for (k, r) in REF_NODES.iter().enumerate() {
                    let p = g.map(r);
                    let q = space.nodes()[space.element_dofs(t)[k]];
                    assert!((p[0] - q[0]).abs() < 1e-15 && (p[1] - q[1]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let space = Space::uniform(5).unwrap();
        let c = space.interpolate(|_| 3.25);
        assert!(c.coeffs().iter().all(|&v| v == 3.25));
        let quad = |p: Point| 0.3 + p[0] - 2.0 * p[1] + p[0] * p[0] + 0.5 * p[0] * p[1] - p[1] * p[1];
        let lin = space.interpolate(|p| p[0] + p[1]);
        let q = space.interpolate(quad);
        let mut s = 0x2545F4914F6CDD1Du64;
        for _ in 0..200 {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            let x = (s % 100_000) as f64 / 100_000.0;
            let y = ((s >> 20) % 100_000) as f64 / 100_000.0;
            assert!((space.evaluate(&lin, [x, y]).unwrap() - (x + y)).abs() < 1e-14);
            assert!((space.evaluate(&q, [x, y]).unwrap() - quad([x, y])).abs() < 1e-13);
        }
        assert!(space.evaluate(&lin, [1.5, 0.0]).is_err());
        assert!(space.evaluate(&Field::zeros(3), [0.5, 0.5]).is_err());
    }

    fn interpolation_l2_error(n: usize) -> f64 {
        let space = Space::uniform(n).unwrap();
        let f = |p: Point| (std::f64::consts::PI * p[0]).sin();
        let u = space.interpolate(f);
        let rule = TriangleRule::conical(12);
        let mut err = 0.0;
        for t in 0..space.mesh().triangles().len() {
            let g = space.geometry(t);
            let loc = space.local(&u, t);
            for (r, w) in rule.iter() {
                let b = g.basis_at_reference(r);
                let uh: f64 = (0..6).map(|k| loc[k] * b.values[k]).sum();
                err += 2.0 * g.area * w * (uh - f(g.map(r))).powi(2);
            }
        }
        err.sqrt()
    }

    #[test]
    fn interpolation_error_is_third_order() {
        let ns = [8, 16, 32, 64];
        let e: Vec<f64> = ns.iter().map(|&n| interpolation_l2_error(n)).collect();
        for k in 1..ns.len() {
            let slope = (e[k - 1] / e[k]).ln() / 2f64.ln();
            assert!((slope - 3.0).abs() < 0.15, "slope {slope}");
        }
    }

    #[test]
    fn node_lookup() {
        let space = Space::uniform(4).unwrap();
        for (d, &p) in space.nodes().iter().enumerate() {
            assert_eq!(space.node_at(p), Some(d));
        }
        assert_eq!(space.node_at([0.1, 0.1]), None);
        assert_eq!(space.node_at([1.5, 0.0]), None);
    }

    #[test]
    fn exports() {
        let space = Space::uniform(2).unwrap();
        let f = space.interpolate(|p| p[0]);
        let mut v = Vec::new();
        space.write_vtk(&mut v, "t", &[("phi", &f)]).unwrap();
        let s = String::from_utf8(v).unwrap();
        assert!(s.contains("POINTS 25 double") && s.contains("CELLS 8 56") && s.contains("POINT_DATA 25"));
        let mut c = Vec::new();
        space.write_csv(&mut c, &f).unwrap();
        let c = String::from_utf8(c).unwrap();
        assert_eq!(c.lines().next(), Some("dof_index,x,y,value"));
        assert_eq!(c.lines().count(), 26);
    }
}
