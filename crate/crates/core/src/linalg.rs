//! Sparse Cholesky (backed by faer), preconditioned conjugate gradients and a
//! generalized Lanczos estimator for extremal Rayleigh quotients.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, MatMut, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, CsrMatrix, SparsityPattern};

/// Symbolic Cholesky analysis of a symmetric pattern, reusable across numeric
/// factorizations of matrices sharing that pattern.
#[derive(Debug, Clone)]
pub struct SymmetricSolver {
    structure: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLlt<usize>,
}

/// Numeric factor `L L^T` of one matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    llt: Llt<usize, f64>,
}

impl SymmetricSolver {
    pub fn new(pattern: &SparsityPattern) -> Result<Self> {
        // A symmetric CSR pattern is its own CSC transpose.
        let structure = SymbolicSparseColMat::new_checked(
            pattern.dim(),
            pattern.dim(),
            pattern.row_ptr().to_vec(),
            None,
            pattern.col_idx().to_vec(),
        );
        let symbolic = SymbolicLlt::try_new(structure.as_ref(), Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(SymmetricSolver { structure, symbolic })
    }

    /// Factors a symmetric positive definite matrix on the analysed pattern.
    pub fn factor(&self, m: &CsrMatrix) -> Result<CholeskyFactor> {
        let view = SparseColMatRef::new(self.structure.as_ref(), m.values());
        let llt = Llt::try_new_with_symbolic(self.symbolic.clone(), view, Side::Lower)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(CholeskyFactor { llt })
    }
}

impl CholeskyFactor {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.llt.solve_in_place(mat);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Symbolic LU analysis of a structurally symmetric pattern.
#[derive(Debug, Clone)]
pub struct GeneralSolver {
    structure: SymbolicSparseColMat<usize>,
    symbolic: SymbolicLu<usize>,
}

/// Numeric LU factor of one matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: Lu<usize, f64>,
}

impl GeneralSolver {
    pub fn new(pattern: &SparsityPattern) -> Result<Self> {
        let structure = SymbolicSparseColMat::new_checked(
            pattern.dim(),
            pattern.dim(),
            pattern.row_ptr().to_vec(),
            None,
            pattern.col_idx().to_vec(),
        );
        let symbolic = SymbolicLu::try_new(structure.as_ref()).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(GeneralSolver { structure, symbolic })
    }

    pub fn factor(&self, m: &CsrMatrix) -> Result<LuFactor> {
        // Read as compressed columns the CSR values describe the transpose.
        let view = SparseColMatRef::new(self.structure.as_ref(), m.values());
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), view).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(LuFactor { lu })
    }
}

impl LuFactor {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
        self.lu.solve_transpose_in_place(mat);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solver for a singular symmetric matrix whose kernel is the constants:
/// one diagonal entry is stiffened so the factorization exists, which leaves
/// solutions of compatible systems (`1^T r = 0`) unchanged up to a constant.
#[derive(Debug, Clone)]
pub struct PinnedSolver {
    factor: CholeskyFactor,
}

impl PinnedSolver {
    pub fn new(solver: &SymmetricSolver, m: &CsrMatrix) -> Result<Self> {
        let mut pinned = m.clone();
        let k = m.pattern().find(0, 0).expect("diagonal in pattern");
        let scale = m.values()[k].abs().max(1.0);
        pinned.values_mut()[k] += scale;
        Ok(PinnedSolver {
            factor: solver.factor(&pinned)?,
        })
    }

    /// A particular solution of `m y = r` for compatible `r`.
    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        self.factor.solve(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for `A x = b` from the initial guess in `x`.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= rel_tol {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: rel,
        });
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                tol: rel_tol,
                iterations: it,
                achieved: rel,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= rel_tol {
            return Ok(CgStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::LinearSolve {
        tol: rel_tol,
        iterations: max_iter,
        achieved: rel,
    })
}

/// Right-preconditioned restarted GMRES for `A x = b` from the initial guess in `x`.
/// The reported residual is that of the unpreconditioned system.
pub fn gmres(
    apply: impl Fn(&[f64], &mut [f64]),
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let restart = restart.max(1);
    let mut total = 0;
    let mut tmp = vec![0.0; n];
    loop {
        apply(x, &mut tmp);
        let r: Vec<f64> = b.iter().zip(&tmp).map(|(bi, ai)| bi - ai).collect();
        let beta = dot(&r, &r).sqrt();
        let rel = beta / bnorm;
        if rel <= rel_tol {
            return Ok(CgStats {
                iterations: total,
                relative_residual: rel,
            });
        }
        if total >= max_iter {
            return Err(Error::LinearSolve {
                tol: rel_tol,
                iterations: total,
                achieved: rel,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        // Hessenberg columns after rotation, rotations and the rotated rhs
        let mut h: Vec<Vec<f64>> = Vec::new();
        let (mut cs, mut sn): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut g = vec![beta];
        let mut k = 0;
        while k < restart && total < max_iter {
            let zk = precondition(&v[k]);
            apply(&zk, &mut tmp);
            let mut w = tmp.clone();
            let mut col = vec![0.0; k + 2];
            for _ in 0..2 {
                for (i, vi) in v.iter().enumerate() {
                    let c = dot(vi, &w);
                    col[i] += c;
                    axpy(-c, vi, &mut w);
                }
            }
            col[k + 1] = dot(&w, &w).sqrt();
            for i in 0..k {
                let (a, b2) = (col[i], col[i + 1]);
                col[i] = cs[i] * a + sn[i] * b2;
                col[i + 1] = -sn[i] * a + cs[i] * b2;
            }
            let (a, b2) = (col[k], col[k + 1]);
            let rho = a.hypot(b2);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, b2 / rho) };
            cs.push(c);
            sn.push(s);
            col[k] = rho;
            col[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] *= c;
            let wnorm = dot(&w, &w).sqrt();
            h.push(col);
            z.push(zk);
            total += 1;
            k += 1;
            if g[k].abs() <= rel_tol * bnorm || wnorm == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / wnorm).collect());
        }
        // back substitution for the update coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (yi, zi) in y.iter().zip(&z) {
            axpy(*yi, zi, x);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// When false only the largest value must converge; `min` is then a Ritz upper bound.
    pub track_min: bool,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            rel_tol: 1e-8,
            max_iter: 400,
            seed: 0x5eed,
            track_min: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub iterations: usize,
    pub min_vector: Vec<f64>,
    pub max_vector: Vec<f64>,
}

/// Smallest and largest values of `x^T A x / x^T B x` over `x` with `d^T x = 0`.
///
/// `A` and `B` are symmetric, `B` is positive definite on that complement, and
/// each of `A 1`, `B 1` is zero or parallel to `d`, so that `1^T A x = 1^T B x = 0`
/// there. `solve_b` returns some solution of `B y = r` for such right-hand
/// sides. Runs Lanczos on `B^+ A` in the `B` inner product with full
/// reorthogonalization until the extremal Ritz values have residual estimates
/// below `rel_tol` times the spectral scale.
pub fn generalized_extremes(
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_b: impl Fn(&[f64]) -> Vec<f64>,
    solve_b: impl Fn(&[f64]) -> Vec<f64>,
    deflation: &[f64],
    opts: LanczosOptions,
) -> Result<Extremes> {
    let n = deflation.len();
    let d_sum: f64 = deflation.iter().sum();
    let project = |x: &mut [f64]| {
        let c = dot(deflation, x) / d_sum;
        x.iter_mut().for_each(|v| *v -= c);
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    project(&mut q);
    let bq = apply_b(&q);
    let nrm = dot(&q, &bq).sqrt();
    q.iter_mut().for_each(|v| *v /= nrm);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut b_basis: Vec<Vec<f64>> = vec![bq.iter().map(|v| v / nrm).collect()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let max_iter = opts.max_iter.min(n.saturating_sub(1)).max(1);

    for j in 0..max_iter {
        let qj = &basis[j];
        let aq = apply_a(qj);
        let alpha = dot(qj, &aq);
        let mut w = solve_b(&aq);
        project(&mut w);
        for _ in 0..2 {
            for (qk, bqk) in basis.iter().zip(&b_basis) {
                let c = dot(bqk, &w);
                axpy(-c, qk, &mut w);
            }
        }
        alphas.push(alpha);
        let bw = apply_b(&w);
        let beta = dot(&w, &bw).max(0.0).sqrt();

        let done_early = beta <= 1e-14 * alpha.abs().max(1e-300);
        if j >= 4 || done_early || j + 1 == max_iter {
            let (theta, vecs) = tridiagonal_eigen(&alphas, &betas)?;
            let k = theta.len();
            let last = |col: usize| vecs[(k - 1, col)];
            let scale = theta[0].abs().max(theta[k - 1].abs());
            let res_min = beta * last(0).abs();
            let res_max = beta * last(k - 1).abs();
            if done_early || ((!opts.track_min || res_min <= opts.rel_tol * scale) && res_max <= opts.rel_tol * scale) {
                let ritz = |col: usize| {
                    let mut v = vec![0.0; n];
                    for (i, qi) in basis.iter().take(k).enumerate() {
                        axpy(vecs[(i, col)], qi, &mut v);
                    }
                    v
                };
                return Ok(Extremes {
                    min: theta[0],
                    max: theta[k - 1],
                    iterations: j + 1,
                    min_vector: ritz(0),
                    max_vector: ritz(k - 1),
                });
            }
        }
        betas.push(beta);
        w.iter_mut().for_each(|v| *v /= beta);
        b_basis.push(bw.iter().map(|v| v / beta).collect());
        basis.push(w);
    }
    Err(Error::EigenNonConvergence(max_iter))
}

fn tridiagonal_eigen(alphas: &[f64], betas: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
    let k = alphas.len();
    let t = Mat::<f64>::from_fn(k, k, |i, j| {
        if i == j {
            alphas[i]
        } else if i == j + 1 {
            betas[j]
        } else if j == i + 1 {
            betas[i]
        } else {
            0.0
        }
    });
    let eig = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("tridiagonal eigensolve: {e:?}")))?;
    let s = eig.S().column_vector();
    let theta: Vec<f64> = (0..k).map(|i| s[i]).collect();
    let u = eig.U().to_owned();
    Ok((theta, u))
}
