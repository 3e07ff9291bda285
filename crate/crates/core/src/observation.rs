//! Coarse observations of the truth and the nudging term they drive.
//!
//! The primary interpolant `I_H` is the L2 projection onto piecewise
//! constants on an `m x m` grid of square cells aligned with the fine mesh.
//! Its nudging operator `N_ij = (I_H psi_j, psi_i)` is a sum of one rank-one
//! term per cell, so it is applied without being stored.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{AssembledForm, FormKind};
use crate::mesh::Point;
use crate::quadrature::TriangleRule;
use crate::space::{Field, Space};
use crate::sparse::{CsrMatrix, SparsityPattern};

/// Uniform partition of the unit square into `cells x cells` squares of side `H = 1/cells`.
#[derive(Debug, Clone)]
pub struct CoarseGrid {
    cells: usize,
    n: usize,
    cell_triangles: Vec<Vec<usize>>,
}

impl CoarseGrid {
    /// Requires every cell to be a union of whole mesh squares, i.e. `cells` divides `n`.
    pub fn new(space: &Space, cells: usize) -> Result<Self> {
        let n = space.mesh().n();
        if cells == 0 || !n.is_multiple_of(cells) {
            return Err(Error::MisalignedGrid { cells, n });
        }
        let k = n / cells;
        let mut cell_triangles = vec![Vec::with_capacity(2 * k * k); cells * cells];
        for t in 0..space.mesh().triangles().len() {
            let square = t / 2;
            let (i, j) = (square % n, square / n);
            cell_triangles[(j / k) * cells + i / k].push(t);
        }
        Ok(CoarseGrid { cells, n, cell_triangles })
    }

    /// Aligned grid whose cell size is closest to `h` among divisors of `n`.
    pub fn nearest(space: &Space, h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidParameter(format!("observation spacing must lie in (0, 1], got {h}")));
        }
        Self::new(space, nearest_aligned_cells(space.mesh().n(), h))
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells * self.cells
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.spacing() * self.spacing()
    }

    /// Cell `(i, j)` at index `j * cells + i`.
    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.cells + i
    }

    pub fn cell_triangles(&self, cell: usize) -> &[usize] {
        &self.cell_triangles[cell]
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let (i, j) = (cell % self.cells, cell / self.cells);
        let h = self.spacing();
        [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
    }

    pub fn mesh_n(&self) -> usize {
        self.n
    }
}

/// Divisor `m` of `n` minimizing `|1/m - h|`; ties go to the finer grid.
pub fn nearest_aligned_cells(n: usize, h: f64) -> usize {
    (1..=n)
        .filter(|m| n.is_multiple_of(*m))
        .min_by(|a, b| {
            let da = (1.0 / *a as f64 - h).abs();
            let db = (1.0 / *b as f64 - h).abs();
            da.total_cmp(&db).then(b.cmp(a))
        })
        .unwrap_or(n)
}

/// Sparse vector `c_i = int_cell psi_i`.
#[derive(Debug, Clone)]
struct CellVector {
    dofs: Vec<usize>,
    weights: Vec<f64>,
}

impl CellVector {
    fn dot(&self, x: &[f64]) -> f64 {
        self.dofs.iter().zip(&self.weights).map(|(&d, w)| w * x[d]).sum()
    }
}

/// `N = sum_cells c c^T / |cell|`.
#[derive(Debug, Clone)]
pub struct CellAverageNudging {
    grid: CoarseGrid,
    cells: Vec<CellVector>,
    n_dofs: usize,
}

impl CellAverageNudging {
    pub fn new(space: &Space, grid: CoarseGrid) -> Result<Self> {
        if grid.mesh_n() != space.mesh().n() {
            return Err(Error::MisalignedGrid {
                cells: grid.cells_per_side(),
                n: space.mesh().n(),
            });
        }
        let rule = TriangleRule::dunavant6();
        let mut cells = Vec::with_capacity(grid.n_cells());
        for c in 0..grid.n_cells() {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for &t in grid.cell_triangles(c) {
                let g = space.geometry(t);
                let dofs = space.element_dofs(t);
                let mut loc = [0.0; 6];
                for (r, w) in rule.iter() {
                    let b = g.basis_at_reference(r);
                    for k in 0..6 {
                        loc[k] += 2.0 * g.area * w * b.values[k];
                    }
                }
                for k in 0..6 {
                    acc.push((dofs[k], loc[k]));
                }
            }
            acc.sort_by_key(|p| p.0);
            let mut v = CellVector {
                dofs: Vec::new(),
                weights: Vec::new(),
            };
            for (d, w) in acc {
                if v.dofs.last() == Some(&d) {
                    *v.weights.last_mut().unwrap() += w;
                } else {
                    v.dofs.push(d);
                    v.weights.push(w);
                }
            }
            cells.push(v);
        }
        Ok(CellAverageNudging {
            grid,
            cells,
            n_dofs: space.n_dofs(),
        })
    }

    pub fn grid(&self) -> &CoarseGrid {
        &self.grid
    }

    /// Cell averages `(1/|cell|) int_cell v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.grid.cell_area();
        self.cells.iter().map(|c| inv * c.dot(v)).collect()
    }

    /// `sum_cells value_cell * int_cell psi_i`: the load of a piecewise constant.
    pub fn inject(&self, cell_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for (c, &a) in self.cells.iter().zip(cell_values) {
            for (&d, &w) in c.dofs.iter().zip(&c.weights) {
                out[d] += a * w;
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.inject(&self.project(x))
    }

    /// Explicit `N` on its own sparsity pattern (cell blocks).
    pub fn assemble(&self) -> AssembledForm {
        let pattern = Arc::new(SparsityPattern::from_blocks(self.n_dofs, self.cells.iter().map(|c| &c.dofs[..])));
        let mut m = CsrMatrix::zeros(pattern);
        let inv = 1.0 / self.grid.cell_area();
        for c in &self.cells {
            let k = c.dofs.len();
            let mut block = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    block[a * k + b] = inv * c.weights[a] * c.weights[b];
                }
            }
            m.add_block(&c.dofs, &block);
        }
        AssembledForm {
            matrix: m,
            symmetric: true,
            kind: FormKind::Nudging,
        }
    }
}

/// Masked-node observation: `omega (v phi - v phi_true, v psi)` with `v` the
/// P2 field equal to one at the observation nodes and zero at all others.
#[derive(Debug, Clone)]
pub struct IndicatorNudging {
    indicator: Field,
    points: Vec<Point>,
    matrix: CsrMatrix,
}

impl IndicatorNudging {
    /// `matrix_ij = int v^2 psi_j psi_i` on the pattern `pattern` (which must
    /// contain every triangle block).
    pub fn new(space: &Space, points: &[Point], pattern: Arc<SparsityPattern>) -> Result<Self> {
        let mut indicator = space.zero_field();
        for &p in points {
            let node = space.node_at(p).ok_or(Error::PointNotOnNode { x: p[0], y: p[1] })?;
            indicator.coeffs_mut()[node] = 1.0;
        }
        // v^2 psi psi has degree 8
        let rule = TriangleRule::conical(8);
        let mut matrix = CsrMatrix::zeros(pattern);
        let mut block = [0.0; 36];
        for t in 0..space.mesh().triangles().len() {
            let u = space.local(&indicator, t);
            if u.iter().all(|&c| c == 0.0) {
                continue;
            }
            let g = space.geometry(t);
            block.fill(0.0);
            for (r, w) in rule.iter() {
                let b = g.basis_at_reference(r);
                let v: f64 = (0..6).map(|k| u[k] * b.values[k]).sum();
                let s = 2.0 * g.area * w * v * v;
                for k in 0..6 {
                    for l in 0..6 {
                        block[6 * k + l] += s * b.values[k] * b.values[l];
                    }
                }
            }
            matrix.add_block(space.element_dofs(t), &block);
        }
        Ok(IndicatorNudging {
            indicator,
            points: points.to_vec(),
            matrix,
        })
    }

    /// Observation points at the centers of the cells of `grid`.
    pub fn at_cell_centers(space: &Space, grid: &CoarseGrid, pattern: Arc<SparsityPattern>) -> Result<Self> {
        let points: Vec<Point> = (0..grid.n_cells()).map(|c| grid.cell_center(c)).collect();
        Self::new(space, &points, pattern)
    }

    pub fn indicator(&self) -> &Field {
        &self.indicator
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Matrix contribution `omega V` and vector `omega V phi_true` of the nudging term.
    pub fn contribution(&self, phi_true: &Field, omega: f64) -> (CsrMatrix, Vec<f64>) {
        let v = self.matrix.matvec(phi_true.coeffs()).into_iter().map(|x| omega * x).collect();
        (self.matrix.scaled(omega), v)
    }
}

/// The observation operator used by the nudged scheme.
#[derive(Debug, Clone)]
pub enum Nudging {
    CellAverage(CellAverageNudging),
    Indicator(IndicatorNudging),
}

impl Nudging {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Nudging::CellAverage(n) => n.apply(x),
            Nudging::Indicator(n) => n.matrix.matvec(x),
        }
    }

    /// Present when the operator lives on the shared form pattern.
    pub fn sparse_matrix(&self) -> Option<&CsrMatrix> {
        match self {
            Nudging::CellAverage(_) => None,
            Nudging::Indicator(n) => Some(&n.matrix),
        }
    }

    /// `omega (I_H phi_true, psi_i)`, the known-data half of the nudging term.
    pub fn observation_rhs(&self, phi_true: &Field, omega: f64) -> Result<Vec<f64>> {
        let n = match self {
            Nudging::CellAverage(c) => c.n_dofs,
            Nudging::Indicator(i) => i.indicator.len(),
        };
        if phi_true.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: phi_true.len() });
        }
        if !phi_true.is_finite() {
            return Err(Error::NonFinite("truth snapshot"));
        }
        let mut rhs = match self {
            Nudging::CellAverage(c) => c.inject(&c.project(phi_true.coeffs())),
            Nudging::Indicator(i) => i.matrix.matvec(phi_true.coeffs()),
        };
        rhs.iter_mut().for_each(|v| *v *= omega);
        Ok(rhs)
    }
}

/// Appends `t,cell_i,cell_j,value` rows for one set of cell averages.
pub fn write_cell_averages<W: Write>(mut w: W, grid: &CoarseGrid, t: f64, averages: &[f64]) -> std::io::Result<()> {
    for (c, v) in averages.iter().enumerate() {
        writeln!(w, "{t:.6},{},{},{v:.17e}", c % grid.cells_per_side(), c / grid.cells_per_side())?;
    }
    Ok(())
}
