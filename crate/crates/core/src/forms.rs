//! Bilinear forms and the nonlinear system of one backward-Euler step.
//!
//! All forms are assembled on one shared sparsity pattern covering triangle
//! couplings and the two-triangle patches around every edge, so they can be
//! summed value-by-value.
//!
//! Edge conventions: on an interior edge with normal `n` pointing from `K-` to
//! `K+` the jump of the normal derivative is `n . (grad v+ - grad v-)` and the
//! average of the second normal derivative is the mean of `n^T (D^2 v) n` over
//! both sides. On a boundary edge with outward `n` the jump is `-n . grad v`
//! and the average is the one-sided second normal derivative.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{EdgeNeighbors, Point};
use crate::observation::Nudging;
use crate::quadrature::{IntervalRule, TriangleRule};
use crate::space::{Field, Space};
use crate::sparse::{dot, CsrMatrix, SparsityPattern};

/// Interior penalty parameter `sigma >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Penalty(f64);

impl Penalty {
    pub const DEFAULT: Penalty = Penalty(5.0);

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 1.0) || !sigma.is_finite() {
            return Err(Error::PenaltyTooSmall(sigma));
        }
        Ok(Penalty(sigma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Penalty {
    fn default() -> Self {
        Penalty::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormKind {
    Mass,
    Stiffness,
    Cip,
    NormGram,
    Nudging,
    Jacobian,
}

#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub matrix: CsrMatrix,
    pub symmetric: bool,
    pub kind: FormKind,
}

impl AssembledForm {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.matrix.bilinear(x, x)
    }
}

/// Traces of every basis function touching an edge, at the edge quadrature points.
#[derive(Debug, Clone)]
pub struct EdgeData {
    /// Union of the degrees of freedom of the adjacent triangles.
    pub dofs: Vec<usize>,
    pub points: [Point; 3],
    /// Quadrature weights scaled by the edge length.
    pub weights: [f64; 3],
    pub length: f64,
    /// `jumps[q][k]`: jump of the normal derivative of basis `dofs[k]`.
    pub jumps: [Vec<f64>; 3],
    /// `averages[q][k]`: average second normal derivative of basis `dofs[k]`.
    pub averages: [Vec<f64>; 3],
    map: Vec<usize>,
}

/// Scheme coefficients of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub dt: f64,
    pub epsilon: f64,
    pub omega: f64,
}

impl SchemeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega must be non-negative, got {}", self.omega)));
        }
        Ok(())
    }
}

/// The state-independent operators of the scheme.
#[derive(Debug, Clone)]
pub struct ConstantForms {
    pub mass: AssembledForm,
    pub stiffness: AssembledForm,
    pub cip: AssembledForm,
    pub sigma: Penalty,
}

/// Newton matrix: a sparse part plus, for cell-average nudging, a low-rank part.
#[derive(Debug, Clone)]
pub struct Jacobian<'a> {
    pub sparse: AssembledForm,
    pub low_rank: Option<(f64, &'a Nudging)>,
}

impl Jacobian<'_> {
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.sparse.matrix.matvec_into(x, y);
        if let Some((omega, nudging)) = self.low_rank {
            let nx = nudging.apply(x);
            for (yi, v) in y.iter_mut().zip(nx) {
                *yi += omega * v;
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }
}

/// Assembly driver holding quadrature tables and scatter maps for one space.
#[derive(Debug)]
pub struct Assembler {
    space: Arc<Space>,
    pattern: Arc<SparsityPattern>,
    rule: TriangleRule,
    tri_maps: Vec<Vec<usize>>,
    edges: Vec<EdgeData>,
}

impl Assembler {
    pub fn new(space: Arc<Space>) -> Self {
        let mesh = space.mesh();
        let edge_rule = IntervalRule::gauss3();
        let mut edges = Vec::with_capacity(mesh.edges().len());
        for e in mesh.edges() {
            let [a, b] = [mesh.vertices()[e.vertices[0]], mesh.vertices()[e.vertices[1]]];
            let sides: Vec<(usize, f64)> = match e.neighbors {
                EdgeNeighbors::Interior { minus, plus } => vec![(minus, -1.0), (plus, 1.0)],
                EdgeNeighbors::Boundary { triangle } => vec![(triangle, -1.0)],
            };
            let avg_weight = 1.0 / sides.len() as f64;
            let mut dofs: Vec<usize> = Vec::with_capacity(9);
            for &(t, _) in &sides {
                for &d in space.element_dofs(t) {
                    if !dofs.contains(&d) {
                        dofs.push(d);
                    }
                }
            }
            let mut points = [[0.0; 2]; 3];
            let mut weights = [0.0; 3];
            let mut jumps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; dofs.len()]);
            let mut averages: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; dofs.len()]);
            let n = e.normal;
            for (q, (s, w)) in edge_rule.iter().enumerate() {
                let x = [a[0] + s[0] * (b[0] - a[0]), a[1] + s[0] * (b[1] - a[1])];
                points[q] = x;
                weights[q] = w * e.length;
                for &(t, sign) in &sides {
                    let g = space.geometry(t);
                    let basis = g.basis(g.barycentric(x));
                    for (k, &d) in space.element_dofs(t).iter().enumerate() {
                        let pos = dofs.iter().position(|&u| u == d).unwrap();
                        let dn = basis.grads[k][0] * n[0] + basis.grads[k][1] * n[1];
                        let h = basis.hessians[k];
                        let d2n = n[0] * (h[0][0] * n[0] + h[0][1] * n[1]) + n[1] * (h[1][0] * n[0] + h[1][1] * n[1]);
                        jumps[q][pos] += sign * dn;
                        averages[q][pos] += avg_weight * d2n;
                    }
                }
            }
            edges.push(EdgeData {
                dofs,
                points,
                weights,
                length: e.length,
                jumps,
                averages,
                map: Vec::new(),
            });
        }

        let pattern = Arc::new(SparsityPattern::from_blocks(
            space.n_dofs(),
            space
                .dofmap()
                .iter()
                .map(|d| &d[..])
                .chain(edges.iter().map(|e| &e.dofs[..])),
        ));
        let tri_maps = space.dofmap().iter().map(|d| pattern.scatter_map(d)).collect();
        for e in &mut edges {
            e.map = pattern.scatter_map(&e.dofs);
        }

        Assembler {
            space,
            pattern,
            rule: TriangleRule::dunavant6(),
            tri_maps,
            edges,
        }
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn edge_data(&self) -> &[EdgeData] {
        &self.edges
    }

    pub fn volume_rule(&self) -> &TriangleRule {
        &self.rule
    }

    fn n_triangles(&self) -> usize {
        self.space.mesh().triangles().len()
    }

    /// Sums element contributions computed by `local(t, &mut block)` (6x6, row-major).
    fn assemble_volume(&self, mut local: impl FnMut(usize, &mut [f64; 36])) -> CsrMatrix {
        let mut m = CsrMatrix::zeros(self.pattern.clone());
        let mut block = [0.0; 36];
        for t in 0..self.n_triangles() {
            block.fill(0.0);
            local(t, &mut block);
            m.add_scattered(&self.tri_maps[t], &block);
        }
        m
    }

    pub fn assemble_mass(&self) -> AssembledForm {
        let matrix = self.assemble_volume(|t, block| {
            let g = self.space.geometry(t);
            for (r, w) in self.rule.iter() {
                let b = g.basis_at_reference(r);
                let wq = 2.0 * g.area * w;
                for k in 0..6 {
                    for l in 0..6 {
                        block[6 * k + l] += wq * b.values[k] * b.values[l];
                    }
                }
            }
        });
        AssembledForm {
            matrix,
            symmetric: true,
            kind: FormKind::Mass,
        }
    }

    pub fn assemble_stiffness(&self) -> AssembledForm {
        let matrix = self.assemble_volume(|t, block| {
            let g = self.space.geometry(t);
            for (r, w) in self.rule.iter() {
                let b = g.basis_at_reference(r);
                let wq = 2.0 * g.area * w;
                for k in 0..6 {
                    for l in 0..6 {
                        block[6 * k + l] += wq * (b.grads[k][0] * b.grads[l][0] + b.grads[k][1] * b.grads[l][1]);
                    }
                }
            }
        });
        AssembledForm {
            matrix,
            symmetric: true,
            kind: FormKind::Stiffness,
        }
    }

    /// Broken `H^2` seminorm Gram matrix: `sum_K (D^2 psi_j : D^2 psi_i)_K`.
    fn assemble_hessian_volume(&self) -> CsrMatrix {
        self.assemble_volume(|t, block| {
            let g = self.space.geometry(t);
            let b = g.basis([1.0 / 3.0; 3]);
            for k in 0..6 {
                for l in 0..6 {
                    let (hk, hl) = (b.hessians[k], b.hessians[l]);
                    let frob = hk[0][0] * hl[0][0] + hk[0][1] * hl[0][1] + hk[1][0] * hl[1][0] + hk[1][1] * hl[1][1];
                    block[6 * k + l] = g.area * frob;
                }
            }
        })
    }

    fn add_edge_terms(&self, m: &mut CsrMatrix, sigma: f64, consistency: bool) {
        let mut block = Vec::with_capacity(81);
        for e in &self.edges {
            let nd = e.dofs.len();
            block.clear();
            block.resize(nd * nd, 0.0);
            let pen = sigma / e.length;
            for q in 0..3 {
                let (j, a, w) = (&e.jumps[q], &e.averages[q], e.weights[q]);
                for k in 0..nd {
                    for l in 0..nd {
                        let mut v = pen * j[k] * j[l];
                        if consistency {
                            v += a[l] * j[k] + a[k] * j[l];
                        }
                        block[nd * k + l] += w * v;
                    }
                }
            }
            m.add_scattered(&e.map, &block);
        }
    }

    /// The symmetric interior penalty form `a_IP(psi_j, psi_i)`.
    pub fn assemble_cip(&self, sigma: Penalty) -> AssembledForm {
        let mut matrix = self.assemble_hessian_volume();
        self.add_edge_terms(&mut matrix, sigma.value(), true);
        AssembledForm {
            matrix,
            symmetric: true,
            kind: FormKind::Cip,
        }
    }

    /// Gram matrix of the mesh-dependent norm, `||v||_{2,h}^2 = v^T G v`.
    pub fn assemble_norm_gram(&self, sigma: Penalty) -> AssembledForm {
        let mut matrix = self.assemble_hessian_volume();
        self.add_edge_terms(&mut matrix, sigma.value(), false);
        AssembledForm {
            matrix,
            symmetric: true,
            kind: FormKind::NormGram,
        }
    }

    /// `||v||_{2,h}`, summed from non-negative element and edge contributions
    /// (the quadratic form `v^T G v` loses digits to cancellation).
    pub fn norm_2h(&self, v: &Field, sigma: Penalty) -> Result<f64> {
        self.space.check_field(v)?;
        let mut total = 0.0;
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            let b = g.basis([1.0 / 3.0; 3]);
            let u = self.space.local(v, t);
            let mut h = [[0.0; 2]; 2];
            for k in 0..6 {
                for r in 0..2 {
                    for c in 0..2 {
                        h[r][c] += u[k] * b.hessians[k][r][c];
                    }
                }
            }
            total += g.area * (h[0][0] * h[0][0] + h[0][1] * h[0][1] + h[1][0] * h[1][0] + h[1][1] * h[1][1]);
        }
        for e in &self.edges {
            for q in 0..3 {
                let jump: f64 = e.dofs.iter().zip(&e.jumps[q]).map(|(&d, j)| v.coeffs()[d] * j).sum();
                total += e.weights[q] * sigma.value() / e.length * jump * jump;
            }
        }
        Ok(total.sqrt())
    }

    pub fn constant_forms(&self, sigma: Penalty) -> ConstantForms {
        ConstantForms {
            mass: self.assemble_mass(),
            stiffness: self.assemble_stiffness(),
            cip: self.assemble_cip(sigma),
            sigma,
        }
    }

    /// `(grad(phi^3), grad psi_i)` with `phi^3` taken pointwise at quadrature points.
    pub fn cubic_term(&self, phi: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.space.n_dofs()];
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            let u = self.space.local(phi, t);
            let dofs = self.space.element_dofs(t);
            let mut loc = [0.0; 6];
            for (r, w) in self.rule.iter() {
                let b = g.basis_at_reference(r);
                let (val, grad) = eval_local(&u, &b.values, &b.grads);
                let s = 2.0 * g.area * w * 3.0 * val * val;
                for k in 0..6 {
                    loc[k] += s * (grad[0] * b.grads[k][0] + grad[1] * b.grads[k][1]);
                }
            }
            for k in 0..6 {
                out[dofs[k]] += loc[k];
            }
        }
        out
    }

    /// Derivative of [`Self::cubic_term`]:
    /// `K3(phi)_ij = (3 phi^2 grad psi_j + 6 phi psi_j grad phi, grad psi_i)`.
    ///
    /// The second term makes it nonsymmetric; it vanishes where `phi` is constant.
    pub fn cubic_jacobian(&self, phi: &Field) -> CsrMatrix {
        self.assemble_volume(|t, block| {
            let g = self.space.geometry(t);
            let u = self.space.local(phi, t);
            for (r, w) in self.rule.iter() {
                let b = g.basis_at_reference(r);
                let (val, grad) = eval_local(&u, &b.values, &b.grads);
                let dx = 2.0 * g.area * w;
                let s = dx * 3.0 * val * val;
                let c = dx * 6.0 * val;
                for k in 0..6 {
                    let gk = b.grads[k];
                    let gphi_k = grad[0] * gk[0] + grad[1] * gk[1];
                    for l in 0..6 {
                        let gl = b.grads[l];
                        block[6 * k + l] += s * (gk[0] * gl[0] + gk[1] * gl[1]) + c * b.values[l] * gphi_k;
                    }
                }
            }
        })
    }

    /// Residual of one step of the nudged scheme at the candidate `phi`:
    ///
    /// `R_i = (phi - phi_prev, psi_i)/dt + (grad phi^3, grad psi_i) - (grad phi_prev, grad psi_i)
    ///        + eps^2 a_IP(phi, psi_i) + omega (I_H phi, psi_i) - obs_rhs_i`
    ///
    /// where `obs_rhs = omega (I_H phi_true, psi_i)` comes from the observation operator.
    pub fn residual(
        &self,
        forms: &ConstantForms,
        nudging: Option<&Nudging>,
        params: SchemeParams,
        phi: &Field,
        phi_prev: &Field,
        obs_rhs: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        params.validate()?;
        self.space.check_field(phi)?;
        self.space.check_field(phi_prev)?;
        if !phi.is_finite() || !phi_prev.is_finite() {
            return Err(Error::NonFinite("residual state"));
        }
        let n = self.space.n_dofs();
        let diff: Vec<f64> = phi.coeffs().iter().zip(phi_prev.coeffs()).map(|(a, b)| a - b).collect();
        let mut r = forms.mass.apply(&diff);
        r.iter_mut().for_each(|v| *v /= params.dt);
        let cubic = self.cubic_term(phi);
        let kprev = forms.stiffness.apply(phi_prev.coeffs());
        let aphi = forms.cip.apply(phi.coeffs());
        let eps2 = params.epsilon * params.epsilon;
        for i in 0..n {
            r[i] += cubic[i] - kprev[i] + eps2 * aphi[i];
        }
        if params.omega != 0.0 {
            let nudging = nudging.ok_or_else(|| Error::InvalidParameter("omega > 0 requires an observation operator".into()))?;
            let nphi = nudging.apply(phi.coeffs());
            for i in 0..n {
                r[i] += params.omega * nphi[i];
            }
        }
        if let Some(rhs) = obs_rhs {
            if rhs.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: rhs.len() });
            }
            if rhs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("observation right-hand side"));
            }
            for i in 0..n {
                r[i] -= rhs[i];
            }
        }
        Ok(r)
    }

    /// `J = M/dt + K3(phi) + eps^2 A + omega N`, the exact derivative of [`Self::residual`].
    pub fn jacobian<'a>(
        &self,
        forms: &ConstantForms,
        nudging: Option<&'a Nudging>,
        params: SchemeParams,
        phi: &Field,
    ) -> Result<Jacobian<'a>> {
        params.validate()?;
        self.space.check_field(phi)?;
        if !phi.is_finite() {
            return Err(Error::NonFinite("jacobian state"));
        }
        let mut m = self.cubic_jacobian(phi);
        m.axpy(1.0 / params.dt, &forms.mass.matrix);
        m.axpy(params.epsilon * params.epsilon, &forms.cip.matrix);
        let mut low_rank = None;
        if params.omega != 0.0 {
            let nudging = nudging.ok_or_else(|| Error::InvalidParameter("omega > 0 requires an observation operator".into()))?;
            match nudging.sparse_matrix() {
                Some(nm) => m.axpy(params.omega, nm),
                None => low_rank = Some((params.omega, nudging)),
            }
        }
        Ok(Jacobian {
            sparse: AssembledForm {
                matrix: m,
                symmetric: false,
                kind: FormKind::Jacobian,
            },
            low_rank,
        })
    }

    /// `a_IP(target, psi_i)` for a smooth target given by its value, gradient and Hessian.
    pub fn cip_load<T: SmoothFunction + ?Sized>(&self, target: &T, sigma: Penalty) -> Vec<f64> {
        let mut out = vec![0.0; self.space.n_dofs()];
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            let b = g.basis([1.0 / 3.0; 3]);
            let dofs = self.space.element_dofs(t);
            for (r, w) in self.rule.iter() {
                let h = target.hessian(g.map(r));
                let wq = 2.0 * g.area * w;
                for k in 0..6 {
                    let hk = b.hessians[k];
                    out[dofs[k]] += wq * (h[0][0] * hk[0][0] + h[0][1] * hk[0][1] + h[1][0] * hk[1][0] + h[1][1] * hk[1][1]);
                }
            }
        }
        let mesh = self.space.mesh();
        for (e, data) in mesh.edges().iter().zip(&self.edges) {
            let n = e.normal;
            let pen = self.sigma_over(sigma, data.length);
            for q in 0..3 {
                let x = data.points[q];
                let h = target.hessian(x);
                let avg = n[0] * (h[0][0] * n[0] + h[0][1] * n[1]) + n[1] * (h[1][0] * n[0] + h[1][1] * n[1]);
                // a smooth target has no interior jump
                let jump = if e.is_boundary() {
                    let g = target.gradient(x);
                    -(g[0] * n[0] + g[1] * n[1])
                } else {
                    0.0
                };
                for (k, &d) in data.dofs.iter().enumerate() {
                    out[d] += data.weights[q] * (avg * data.jumps[q][k] + data.averages[q][k] * jump + pen * jump * data.jumps[q][k]);
                }
            }
        }
        out
    }

    fn sigma_over(&self, sigma: Penalty, length: f64) -> f64 {
        sigma.value() / length
    }

    /// `||target - v||_{2,h}` for a smooth target and a discrete `v`.
    pub fn norm_2h_error<T: SmoothFunction + ?Sized>(&self, target: &T, v: &Field, sigma: Penalty) -> Result<f64> {
        self.space.check_field(v)?;
        let mut total = 0.0;
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            let b = g.basis([1.0 / 3.0; 3]);
            let u = self.space.local(v, t);
            let mut hv = [[0.0; 2]; 2];
            for k in 0..6 {
                for r in 0..2 {
                    for c in 0..2 {
                        hv[r][c] += u[k] * b.hessians[k][r][c];
                    }
                }
            }
            for (r, w) in self.rule.iter() {
                let h = target.hessian(g.map(r));
                let mut s = 0.0;
                for a in 0..2 {
                    for c in 0..2 {
                        s += (h[a][c] - hv[a][c]).powi(2);
                    }
                }
                total += 2.0 * g.area * w * s;
            }
        }
        let mesh = self.space.mesh();
        for (e, data) in mesh.edges().iter().zip(&self.edges) {
            let n = e.normal;
            for q in 0..3 {
                let vj: f64 = data.dofs.iter().enumerate().map(|(k, &d)| v.coeffs()[d] * data.jumps[q][k]).sum();
                let tj = if e.is_boundary() {
                    let g = target.gradient(data.points[q]);
                    -(g[0] * n[0] + g[1] * n[1])
                } else {
                    0.0
                };
                total += data.weights[q] * sigma.value() / data.length * (tj - vj).powi(2);
            }
        }
        Ok(total.max(0.0).sqrt())
    }

    /// `(f, psi_i)` by volume quadrature.
    pub fn load<F: Fn(Point) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = vec![0.0; self.space.n_dofs()];
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            let dofs = self.space.element_dofs(t);
            for (r, w) in self.rule.iter() {
                let b = g.basis_at_reference(r);
                let fx = f(g.map(r));
                for k in 0..6 {
                    out[dofs[k]] += 2.0 * g.area * w * fx * b.values[k];
                }
            }
        }
        out
    }

    /// `int_Omega f` by volume quadrature.
    pub fn integrate<F: Fn(Point) -> f64>(&self, f: F) -> f64 {
        let mut s = 0.0;
        for t in 0..self.n_triangles() {
            let g = self.space.geometry(t);
            for (r, w) in self.rule.iter() {
                s += 2.0 * g.area * w * f(g.map(r));
            }
        }
        s
    }
}

/// A smooth function known through its value, gradient and Hessian.
pub trait SmoothFunction: Sync {
    fn value(&self, p: Point) -> f64;
    fn gradient(&self, p: Point) -> [f64; 2];
    fn hessian(&self, p: Point) -> [[f64; 2]; 2];
}

pub(crate) fn eval_local(u: &[f64; 6], values: &[f64; 6], grads: &[[f64; 2]; 6]) -> (f64, [f64; 2]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    for k in 0..6 {
        v += u[k] * values[k];
        g[0] += u[k] * grads[k][0];
        g[1] += u[k] * grads[k][1];
    }
    (v, g)
}

/// `sum_i (M x)_i`, i.e. the integral of the field.
pub fn total_mass(mass: &AssembledForm, x: &[f64]) -> f64 {
    let ones = vec![1.0; x.len()];
    dot(&ones, &mass.apply(x))
}
