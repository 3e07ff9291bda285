//! Structured triangulations of the unit square.
//!
//! Every square of an `n x n` grid is split by one diagonal into two right
//! isosceles triangles. The rising diagonal (lower-left to upper-right) is used
//! everywhere except in the lower-right and upper-left corner squares, whose
//! default split would leave a triangle with two edges on the boundary.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// How a square of the structured grid is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagonal {
    /// From `(i, j)` to `(i + 1, j + 1)`.
    Rising,
    /// From `(i + 1, j)` to `(i, j + 1)`.
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeNeighbors {
    /// `normal` points from `minus` to `plus`.
    Interior { minus: usize, plus: usize },
    /// `normal` points out of the domain.
    Boundary { triangle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Sorted vertex pair.
    pub vertices: [usize; 2],
    pub length: f64,
    pub normal: Point,
    pub neighbors: EdgeNeighbors,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        matches!(self.neighbors, EdgeNeighbors::Boundary { .. })
    }
}

/// Geometry needed to evaluate normal-derivative jumps and averages on an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeTrace {
    pub endpoints: [Point; 2],
    pub normal: Point,
    pub length: f64,
    pub neighbors: EdgeNeighbors,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    n: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    /// Local edge `k` of a triangle joins its local vertices `k` and `k + 1 (mod 3)`.
    triangle_edges: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    diagonals: Vec<Diagonal>,
    h: f64,
}

impl Mesh {
    pub fn build_uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::MeshTooCoarse(n));
        }
        let nv = n + 1;
        let vid = |i: usize, j: usize| j * nv + i;
        let mut vertices = Vec::with_capacity(nv * nv);
        for j in 0..nv {
            for i in 0..nv {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }

        let mut triangles = Vec::with_capacity(2 * n * n);
        let mut diagonals = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let flip = (i == n - 1 && j == 0) || (i == 0 && j == n - 1);
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                if flip {
                    diagonals.push(Diagonal::Falling);
                    triangles.push([v00, v10, v01]);
                    triangles.push([v10, v11, v01]);
                } else {
                    diagonals.push(Diagonal::Rising);
                    triangles.push([v00, v10, v11]);
                    triangles.push([v00, v11, v01]);
                }
            }
        }

        let mut edge_tris: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_tris.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }

        let centroid = |t: usize| -> Point {
            let tri: &[usize; 3] = &triangles[t];
            let mut c = [0.0; 2];
            for &v in tri {
                c[0] += vertices[v][0] / 3.0;
                c[1] += vertices[v][1] / 3.0;
            }
            c
        };

        let mut edges = Vec::with_capacity(edge_tris.len());
        let mut index_of = BTreeMap::new();
        for (idx, (&(a, b), tris)) in edge_tris.iter().enumerate() {
            let (pa, pb) = (vertices[a], vertices[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let length = d[0].hypot(d[1]);
            let mut normal = [d[1] / length, -d[0] / length];
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let neighbors = match *tris.as_slice() {
                [t] => {
                    let c = centroid(t);
                    if normal[0] * (mid[0] - c[0]) + normal[1] * (mid[1] - c[1]) < 0.0 {
                        normal = [-normal[0], -normal[1]];
                    }
                    EdgeNeighbors::Boundary { triangle: t }
                }
                [t0, t1] => {
                    let (minus, plus) = (t0.min(t1), t0.max(t1));
                    let (cm, cp) = (centroid(minus), centroid(plus));
                    if normal[0] * (cp[0] - cm[0]) + normal[1] * (cp[1] - cm[1]) < 0.0 {
                        normal = [-normal[0], -normal[1]];
                    }
                    EdgeNeighbors::Interior { minus, plus }
                }
                _ => unreachable!("edge shared by more than two triangles"),
            };
            index_of.insert((a, b), idx);
            edges.push(Edge {
                vertices: [a, b],
                length,
                normal,
                neighbors,
            });
        }

        let triangle_edges = triangles
            .iter()
            .map(|tri| {
                let mut e = [0; 3];
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    e[k] = index_of[&(a.min(b), a.max(b))];
                }
                e
            })
            .collect();

        Ok(Mesh {
            n,
            vertices,
            triangles,
            triangle_edges,
            edges,
            diagonals,
            h: std::f64::consts::SQRT_2 / n as f64,
        })
    }

    /// Squares per side.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Maximum triangle diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn diagonal(&self, i: usize, j: usize) -> Diagonal {
        self.diagonals[j * self.n + i]
    }

    pub fn triangle_vertices(&self, t: usize) -> [Point; 3] {
        let tri = self.triangles[t];
        [self.vertices[tri[0]], self.vertices[tri[1]], self.vertices[tri[2]]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn triangle_diameter(&self, t: usize) -> f64 {
        let p = self.triangle_vertices(t);
        (0..3)
            .map(|k| {
                let (a, b) = (p[k], p[(k + 1) % 3]);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle of a triangle, in degrees.
    pub fn triangle_min_angle(&self, t: usize) -> f64 {
        let p = self.triangle_vertices(t);
        (0..3)
            .map(|k| {
                let (o, a, b) = (p[k], p[(k + 1) % 3], p[(k + 2) % 3]);
                let u = [a[0] - o[0], a[1] - o[1]];
                let v = [b[0] - o[0], b[1] - o[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
                cos.clamp(-1.0, 1.0).acos().to_degrees()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn edge_trace_geometry(&self, edge: usize) -> Result<EdgeTrace> {
        let e = self.edges.get(edge).ok_or(Error::IndexOutOfRange {
            index: edge,
            len: self.edges.len(),
        })?;
        Ok(EdgeTrace {
            endpoints: [self.vertices[e.vertices[0]], self.vertices[e.vertices[1]]],
            normal: e.normal,
            length: e.length,
            neighbors: e.neighbors,
        })
    }

    /// Finds the triangle containing `p` through the structured grid map.
    ///
    /// Points on a shared edge go to the lower-numbered triangle of their square,
    /// and points on a grid line go to the square above/right of it.
    pub fn locate(&self, p: Point) -> Result<usize> {
        const SLACK: f64 = 1e-12;
        let [x, y] = p;
        if !(x.is_finite() && y.is_finite())
            || x < -SLACK
            || y < -SLACK
            || x > 1.0 + SLACK
            || y > 1.0 + SLACK
        {
            return Err(Error::PointOutsideDomain { x, y });
        }
        let n = self.n as f64;
        let i = ((x * n).floor().max(0.0) as usize).min(self.n - 1);
        let j = ((y * n).floor().max(0.0) as usize).min(self.n - 1);
        let (lx, ly) = (x * n - i as f64, y * n - j as f64);
        let first = 2 * (j * self.n + i);
        let lower = match self.diagonal(i, j) {
            Diagonal::Rising => ly <= lx,
            Diagonal::Falling => lx + ly <= 1.0,
        };
        Ok(if lower { first } else { first + 1 })
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_vertices(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Legacy ASCII VTK dump of the linear triangulation.
    pub fn write_vtk<W: Write>(&self, mut w: W, title: &str) -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "{}", title.replace('\n', " "))?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "{:.17e} {:.17e} 0", v[0], v[1])?;
        }
        writeln!(w, "CELLS {} {}", self.triangles.len(), 4 * self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "CELL_TYPES {}", self.triangles.len())?;
        for _ in &self.triangles {
            writeln!(w, "5")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(n: usize) -> (usize, usize, usize) {
        let m = Mesh::build_uniform(n).unwrap();
        (m.vertices().len(), m.triangles().len(), m.edges().len())
    }

    #[test]
    fn rejects_single_square() {
        assert!(matches!(Mesh::build_uniform(1), Err(Error::MeshTooCoarse(1))));
        assert!(Mesh::build_uniform(0).is_err());
    }

    #[test]
    fn entity_counts() {
        assert_eq!(counts(2), (9, 8, 16));
        let m = Mesh::build_uniform(2).unwrap();
        assert_eq!(m.edges().iter().filter(|e| e.is_boundary()).count(), 8);
        assert_eq!(counts(64), (4225, 8192, 12416));
        for n in [3, 5, 8] {
            assert_eq!(counts(n), ((n + 1) * (n + 1), 2 * n * n, 2 * n * (n + 1) + n * n));
        }
        let m = Mesh::build_uniform(64).unwrap();
        assert!((m.h() - 2f64.sqrt() / 64.0).abs() < 1e-15);
    }

    #[test]
    fn euler_characteristic_and_area() {
        for n in [2, 3, 7, 16] {
            let m = Mesh::build_uniform(n).unwrap();
            let (v, t, e) = (m.vertices().len() as i64, m.triangles().len() as i64, m.edges().len() as i64);
            assert_eq!(v - e + t, 1);
            let area: f64 = (0..m.triangles().len()).map(|t| m.triangle_area(t)).sum();
            assert!((area - 1.0).abs() < 1e-12);
            for t in 0..m.triangles().len() {
                assert!(m.triangle_area(t) > 0.0, "triangles are counterclockwise");
                assert!((m.triangle_min_angle(t) - 45.0).abs() < 1e-9);
                assert!((m.triangle_diameter(t) - m.h()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn one_boundary_edge_per_triangle() {
        for n in [2, 3, 4, 9] {
            let m = Mesh::build_uniform(n).unwrap();
            for te in m.triangle_edges() {
                let nb = te.iter().filter(|&&e| m.edges()[e].is_boundary()).count();
                assert!(nb <= 1);
            }
        }
    }

    #[test]
    fn edge_topology_and_normals() {
        let m = Mesh::build_uniform(5).unwrap();
        let mut uses = vec![0usize; m.edges().len()];
        for te in m.triangle_edges() {
            for &e in te {
                uses[e] += 1;
            }
        }
        for (k, e) in m.edges().iter().enumerate() {
            assert!(e.vertices[0] < e.vertices[1]);
            assert!((e.normal[0].hypot(e.normal[1]) - 1.0).abs() < 1e-14);
            let [a, b] = [m.vertices()[e.vertices[0]], m.vertices()[e.vertices[1]]];
            assert!(((b[0] - a[0]).hypot(b[1] - a[1]) - e.length).abs() < 1e-14);
            // normal is orthogonal to the edge
            assert!((e.normal[0] * (b[0] - a[0]) + e.normal[1] * (b[1] - a[1])).abs() < 1e-14);
            match e.neighbors {
                EdgeNeighbors::Boundary { .. } => {
                    assert_eq!(uses[k], 1);
                    let on_side = |c: f64| c.abs() < 1e-15 || (c - 1.0).abs() < 1e-15;
                    assert!((on_side(a[0]) && a[0] == b[0]) || (on_side(a[1]) && a[1] == b[1]));
                }
                EdgeNeighbors::Interior { minus, plus } => {
                    assert_eq!(uses[k], 2);
                    assert!(minus < plus);
                }
            }
        }
        // lexicographic ordering
        assert!(m.edges().windows(2).all(|w| w[0].vertices < w[1].vertices));
    }

    #[test]
    fn boundary_normals_point_outward() {
        let m = Mesh::build_uniform(4).unwrap();
        for k in 0..m.edges().len() {
            let g = m.edge_trace_geometry(k).unwrap();
            if let EdgeNeighbors::Boundary { .. } = g.neighbors {
                let [a, b] = g.endpoints;
                if a[1] == 0.0 && b[1] == 0.0 {
                    assert_eq!(g.normal, [0.0, -1.0]);
                }
                if a[0] == 1.0 && b[0] == 1.0 {
                    assert_eq!(g.normal, [1.0, 0.0]);
                }
            } else if g.endpoints[0][1] == g.endpoints[1][1] {
                assert!(g.normal == [0.0, 1.0] || g.normal == [0.0, -1.0]);
            }
        }
        assert!(m.edge_trace_geometry(m.edges().len()).is_err());
    }

    #[test]
    fn corner_squares_are_flipped() {
        let m = Mesh::build_uniform(4).unwrap();
        assert_eq!(m.diagonal(3, 0), Diagonal::Falling);
        assert_eq!(m.diagonal(0, 3), Diagonal::Falling);
        assert_eq!(m.diagonal(0, 0), Diagonal::Rising);
        assert_eq!(m.diagonal(3, 3), Diagonal::Rising);
        assert_eq!(m.diagonal(1, 2), Diagonal::Rising);
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let m = Mesh::build_uniform(6).unwrap();
        let pts = [[0.0, 0.0], [1.0, 1.0], [0.93, 0.02], [0.05, 0.97], [0.5, 0.5], [0.31, 0.77], [1.0, 0.0]];
        for p in pts {
            let t = m.locate(p).unwrap();
            let l = m.barycentric(t, p);
            assert!(l.iter().all(|&c| c > -1e-12), "{p:?} -> {l:?}");
        }
        assert!(m.locate([1.1, 0.5]).is_err());
        assert!(m.locate([f64::NAN, 0.5]).is_err());
    }

    #[test]
    fn vtk_dump_has_expected_sections() {
        let m = Mesh::build_uniform(2).unwrap();
        let mut buf = Vec::new();
        m.write_vtk(&mut buf, "mesh").unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("POINTS 9 double"));
        assert!(s.contains("CELLS 8 32"));
        assert!(s.contains("CELL_TYPES 8"));
    }
}
