//! Ritz projection onto the P2 space and the initial conditions built from it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forms::{Assembler, AssembledForm, Penalty, SmoothFunction};
use crate::linalg::{PinnedSolver, SymmetricSolver};
use crate::mesh::Point;
use crate::space::{Field, Space};

/// Seed of the random initial condition unless another is configured.
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone)]
pub struct RitzProjection {
    pub field: Field,
    /// Multiplier of the mean constraint; zero up to roundoff for a consistent form.
    pub multiplier: f64,
}

/// Solves `a_IP(P phi - phi, xi) = 0` for all `xi` with `(P phi - phi, 1) = 0`.
///
/// The constraint is imposed by solving the singular system with one pinned
/// entry and then shifting by a constant, which is the same solution as the
/// bordered saddle system because `a_IP` annihilates constants.
pub fn ritz_project<T: SmoothFunction + ?Sized>(
    asm: &Assembler,
    cip: &AssembledForm,
    target: &T,
    sigma: Penalty,
) -> Result<RitzProjection> {
    let solver = SymmetricSolver::new(asm.pattern())?;
    let pinned = PinnedSolver::new(&solver, &cip.matrix)?;
    ritz_project_with(asm, &pinned, target, sigma)
}

/// As [`ritz_project`] with a prepared factorization of the penalty form.
pub fn ritz_project_with<T: SmoothFunction + ?Sized>(
    asm: &Assembler,
    pinned: &PinnedSolver,
    target: &T,
    sigma: Penalty,
) -> Result<RitzProjection> {
    let mut b = asm.cip_load(target, sigma);
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection load"));
    }
    let mass_ones = asm.load(|_| 1.0);
    let area: f64 = mass_ones.iter().sum();
    // 1^T (A x + lambda M 1) = lambda |Omega|
    let multiplier = b.iter().sum::<f64>() / area;
    for (bi, mi) in b.iter_mut().zip(&mass_ones) {
        *bi -= multiplier * mi;
    }
    let mut x = pinned.solve(&b);
    let current: f64 = x.iter().zip(&mass_ones).map(|(a, m)| a * m).sum();
    let shift = (asm.integrate(|p| target.value(p)) - current) / area;
    x.iter_mut().for_each(|xi| *xi += shift);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("projection solution"));
    }
    Ok(RitzProjection {
        field: Field::from_coeffs(x),
        multiplier,
    })
}

/// Initial condition of a run.
pub enum InitialData<'a> {
    /// Projected onto the space with [`ritz_project`].
    Smooth(&'a dyn SmoothFunction),
    /// Used as given.
    Discrete(Field),
}

pub fn project_initial_data(asm: &Assembler, cip: &AssembledForm, data: InitialData<'_>, sigma: Penalty) -> Result<Field> {
    match data {
        InitialData::Smooth(f) => Ok(ritz_project(asm, cip, f, sigma)?.field),
        InitialData::Discrete(field) => {
            asm.space().check_field(&field)?;
            Ok(field)
        }
    }
}

/// Coefficients drawn i.i.d. uniform on `[-1, 1]`.
pub fn random_field(space: &Space, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::from_coeffs((0..space.n_dofs()).map(|_| rng.random_range(-1.0..=1.0)).collect())
}

/// `tanh(d / (sqrt(2) eps))` with `d` the signed distance to the boundary of
/// the union of `[0.35,0.65]x[0.2,0.8]` and `[0.2,0.8]x[0.35,0.65]`, positive inside.
#[derive(Debug, Clone)]
pub struct CrossProfile {
    epsilon: f64,
    polygon: [Point; 12],
}

impl CrossProfile {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        let (a, b, c, d) = (0.2, 0.35, 0.65, 0.8);
        Ok(CrossProfile {
            epsilon,
            polygon: [
                [b, a],
                [c, a],
                [c, b],
                [d, b],
                [d, c],
                [c, c],
                [c, d],
                [b, d],
                [b, c],
                [a, c],
                [a, b],
                [b, b],
            ],
        })
    }

    fn inside(&self, p: Point) -> bool {
        let in_box = |x0: f64, x1: f64, y0: f64, y1: f64| p[0] > x0 && p[0] < x1 && p[1] > y0 && p[1] < y1;
        in_box(0.35, 0.65, 0.2, 0.8) || in_box(0.2, 0.8, 0.35, 0.65)
    }

    /// Signed distance with its gradient and Hessian (zero along the flat part
    /// of the boundary, `(I - u u^T)/r` near a corner).
    pub fn signed_distance(&self, p: Point) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let mut best = (f64::INFINITY, [0.0; 2], false);
        for k in 0..12 {
            let (a, b) = (self.polygon[k], self.polygon[(k + 1) % 12]);
            let t_dir = [b[0] - a[0], b[1] - a[1]];
            let len2 = t_dir[0] * t_dir[0] + t_dir[1] * t_dir[1];
            let s = ((p[0] - a[0]) * t_dir[0] + (p[1] - a[1]) * t_dir[1]) / len2;
            let (q, at_vertex) = if s <= 0.0 {
                (a, true)
            } else if s >= 1.0 {
                (b, true)
            } else {
                ([a[0] + s * t_dir[0], a[1] + s * t_dir[1]], false)
            };
            let r = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if r < best.0 {
                best = (r, q, at_vertex);
            }
        }
        let (r, q, at_vertex) = best;
        let sign = if self.inside(p) { 1.0 } else { -1.0 };
        if r == 0.0 {
            return (0.0, [0.0; 2], [[0.0; 2]; 2]);
        }
        let u = [(p[0] - q[0]) / r, (p[1] - q[1]) / r];
        let grad = [sign * u[0], sign * u[1]];
        let hess = if at_vertex {
            let f = sign / r;
            [
                [f * (1.0 - u[0] * u[0]), -f * u[0] * u[1]],
                [-f * u[0] * u[1], f * (1.0 - u[1] * u[1])],
            ]
        } else {
            [[0.0; 2]; 2]
        };
        (sign * r, grad, hess)
    }

    fn scale(&self) -> f64 {
        1.0 / (std::f64::consts::SQRT_2 * self.epsilon)
    }
}

impl SmoothFunction for CrossProfile {
    fn value(&self, p: Point) -> f64 {
        (self.signed_distance(p).0 * self.scale()).tanh()
    }

    fn gradient(&self, p: Point) -> [f64; 2] {
        let (d, g, _) = self.signed_distance(p);
        let a = self.scale();
        let f = (a * d).tanh();
        let df = a * (1.0 - f * f);
        [df * g[0], df * g[1]]
    }

    fn hessian(&self, p: Point) -> [[f64; 2]; 2] {
        let (d, g, h) = self.signed_distance(p);
        let a = self.scale();
        let f = (a * d).tanh();
        let df = a * (1.0 - f * f);
        let ddf = -2.0 * a * a * f * (1.0 - f * f);
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = ddf * g[i] * g[j] + df * h[i][j];
            }
        }
        out
    }
}

/// `cos(k pi x) cos(k pi y)`: smooth with zero normal derivative on the unit square.
#[derive(Debug, Clone, Copy)]
pub struct CosineMode {
    pub k: f64,
}

impl SmoothFunction for CosineMode {
    fn value(&self, p: Point) -> f64 {
        let w = self.k * std::f64::consts::PI;
        (w * p[0]).cos() * (w * p[1]).cos()
    }

    fn gradient(&self, p: Point) -> [f64; 2] {
        let w = self.k * std::f64::consts::PI;
        let (cx, sx, cy, sy) = ((w * p[0]).cos(), (w * p[0]).sin(), (w * p[1]).cos(), (w * p[1]).sin());
        [-w * sx * cy, -w * cx * sy]
    }

    fn hessian(&self, p: Point) -> [[f64; 2]; 2] {
        let w = self.k * std::f64::consts::PI;
        let (cx, sx, cy, sy) = ((w * p[0]).cos(), (w * p[0]).sin(), (w * p[1]).cos(), (w * p[1]).sin());
        let w2 = w * w;
        [[-w2 * cx * cy, w2 * sx * sy], [w2 * sx * sy, -w2 * cx * cy]]
    }
}

/// A constant function.
#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl SmoothFunction for Constant {
    fn value(&self, _: Point) -> f64 {
        self.0
    }

    fn gradient(&self, _: Point) -> [f64; 2] {
        [0.0; 2]
    }

    fn hessian(&self, _: Point) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn fd_check(f: &dyn SmoothFunction, p: Point) {
        let h = 1e-6;
        for i in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[i] += h;
            pm[i] -= h;
            let g = (f.value(pp) - f.value(pm)) / (2.0 * h);
            assert!((g - f.gradient(p)[i]).abs() < 1e-5 * (1.0 + g.abs()), "grad {i} at {p:?}");
            let (gp, gm) = (f.gradient(pp), f.gradient(pm));
            for j in 0..2 {
                let hd = (gp[j] - gm[j]) / (2.0 * h);
                assert!((hd - f.hessian(p)[i][j]).abs() < 1e-4 * (1.0 + hd.abs()), "hess {i}{j} at {p:?}: {hd}");
            }
        }
    }

    #[test]
    fn cross_derivatives() {
        let c = CrossProfile::new(0.05).unwrap();
        assert!(c.value([0.5, 0.5]) > 0.99);
        assert!(c.value([0.05, 0.05]) < -0.99);
        assert!(c.signed_distance([0.5, 0.1]).0 < 0.0);
        assert!((c.signed_distance([0.5, 0.1]).0 + 0.1).abs() < 1e-15);
        // near a flat side, an outer corner and a reflex corner
        for p in [[0.5, 0.22], [0.1, 0.13], [0.85, 0.3], [0.27, 0.31], [0.32, 0.31], [0.7, 0.9]] {
            fd_check(&c, p);
        }
        assert!(CrossProfile::new(0.0).is_err());
    }

    #[test]
    fn cosine_derivatives() {
        fd_check(&CosineMode { k: 1.0 }, [0.3, 0.7]);
        fd_check(&CosineMode { k: 2.0 }, [0.1, 0.45]);
    }

    #[test]
    fn random_field_is_reproducible() {
        let space = Space::uniform(4).unwrap();
        let a = random_field(&space, 7);
        let b = random_field(&space, 7);
        assert_eq!(a, b);
        assert_ne!(a, random_field(&space, 8));
        assert!(a.coeffs().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn projection_of_constants_and_mean() {
        let space = Arc::new(Space::uniform(8).unwrap());
        let asm = Assembler::new(space.clone());
        let sigma = Penalty::DEFAULT;
        let cip = asm.assemble_cip(sigma);
        let p = ritz_project(&asm, &cip, &Constant(0.3), sigma).unwrap();
        assert!(p.field.coeffs().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(p.multiplier.abs() < 1e-12);
        let zero = project_initial_data(&asm, &cip, InitialData::Smooth(&Constant(0.0)), sigma).unwrap();
        assert!(zero.max_abs() < 1e-14);

        let cross = CrossProfile::new(0.05).unwrap();
        let p = ritz_project(&asm, &cip, &cross, sigma).unwrap();
        let mass = asm.assemble_mass();
        let m = crate::forms::total_mass(&mass, p.field.coeffs());
        let target = asm.integrate(|x| cross.value(x));
        assert!((m - target).abs() < 1e-10);
        assert!(p.multiplier.abs() < 1e-9);

        // Galerkin orthogonality: the solved system's residual vanishes
        let b = asm.cip_load(&cross, sigma);
        let r = cip.apply(p.field.coeffs());
        let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(r.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-10 * scale));

        let rnd = random_field(&space, 1);
        let same = project_initial_data(&asm, &cip, InitialData::Discrete(rnd.clone()), sigma).unwrap();
        assert_eq!(same, rnd);
    }
}
