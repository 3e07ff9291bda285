//! Norms, energy, numerical estimates of the analysis constants, a sampled
//! check of the gradient splitting inequality and the decay-envelope fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forms::{eval_local, AssembledForm, Assembler, Penalty};
use crate::linalg::{generalized_extremes, Extremes, LanczosOptions, PinnedSolver, SymmetricSolver};
use crate::observation::CellAverageNudging;
use crate::space::Field;
use crate::sparse::dot;

pub fn l2_norm(mass: &AssembledForm, v: &Field) -> f64 {
    mass.energy(v.coeffs()).max(0.0).sqrt()
}

pub fn l2_error(mass: &AssembledForm, a: &Field, b: &Field) -> f64 {
    let d: Vec<f64> = a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x - y).collect();
    mass.energy(&d).max(0.0).sqrt()
}

/// `int phi`.
pub fn mass(mass: &AssembledForm, v: &Field) -> f64 {
    crate::forms::total_mass(mass, v.coeffs())
}

/// Ginzburg-Landau energy `int (phi^2 - 1)^2 / 4 + eps^2 |grad phi|^2 / 2`.
pub fn energy(asm: &Assembler, phi: &Field, epsilon: f64) -> f64 {
    let space = asm.space();
    let rule = asm.volume_rule();
    let mut e = 0.0;
    for t in 0..space.mesh().triangles().len() {
        let g = space.geometry(t);
        let u = space.local(phi, t);
        for (r, w) in rule.iter() {
            let b = g.basis_at_reference(r);
            let (v, grad) = eval_local(&u, &b.values, &b.grads);
            let well = 0.25 * (v * v - 1.0).powi(2);
            let grad2 = grad[0] * grad[0] + grad[1] * grad[1];
            e += 2.0 * g.area * w * (well + 0.5 * epsilon * epsilon * grad2);
        }
    }
    e
}

/// Estimated constants of the analysis. `c_coer` is a lower bound and the
/// others are upper bounds over the sampled space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConstants {
    pub c_coer: f64,
    pub c_cont: f64,
    pub c_p: f64,
    pub c_i: f64,
    /// `sup_m ||phi^m||_inf` over the supplied trajectory.
    pub c_inf: f64,
    /// `sup_m ||phi^m||_L2` over the supplied trajectory.
    pub c_data: f64,
    /// Sup-norm of the reference solution, standing in for its higher-norm bound.
    pub c_data_prime: f64,
}

impl AnalysisConstants {
    /// Every constant equal to one.
    pub fn textbook() -> Self {
        AnalysisConstants {
            c_coer: 1.0,
            c_cont: 1.0,
            c_p: 1.0,
            c_i: 1.0,
            c_inf: 1.0,
            c_data: 1.0,
            c_data_prime: 1.0,
        }
    }
}

/// Operators shared by the constant estimators on one space.
pub struct SpectralContext<'a> {
    asm: &'a Assembler,
    pub mass: AssembledForm,
    pub stiffness: AssembledForm,
    pub cip: AssembledForm,
    pub gram: AssembledForm,
    mass_ones: Vec<f64>,
    opts: LanczosOptions,
}

impl<'a> SpectralContext<'a> {
    pub fn new(asm: &'a Assembler, sigma: Penalty) -> Self {
        let mass = asm.assemble_mass();
        let mass_ones = mass.apply(&vec![1.0; asm.space().n_dofs()]);
        SpectralContext {
            asm,
            stiffness: asm.assemble_stiffness(),
            cip: asm.assemble_cip(sigma),
            gram: asm.assemble_norm_gram(sigma),
            mass,
            mass_ones,
            opts: LanczosOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: LanczosOptions) -> Self {
        self.opts = opts;
        self
    }

    fn max_only(&self) -> LanczosOptions {
        LanczosOptions {
            track_min: false,
            ..self.opts
        }
    }

    fn pinned(&self, m: &AssembledForm) -> Result<PinnedSolver> {
        PinnedSolver::new(&SymmetricSolver::new(self.asm.pattern())?, &m.matrix)
    }

    /// Extremes of `a(x,x)/g(x,x)` over mean-free `x`: `(C_coer, C_cont)`.
    pub fn coercivity_continuity(&self) -> Result<Extremes> {
        let g = self.pinned(&self.gram)?;
        generalized_extremes(
            |x| self.cip.apply(x),
            |x| self.gram.apply(x),
            |r| g.solve(r),
            &self.mass_ones,
            self.opts,
        )
    }

    /// `C_P` as the larger of the two Poincare-type ratios
    /// `||v|| / ||grad v||` and `||grad v|| / ||v||_{2,h}` on mean-free fields.
    pub fn poincare(&self) -> Result<f64> {
        let g = self.pinned(&self.gram)?;
        let k = self.pinned(&self.stiffness)?;
        let grad_vs_norm = generalized_extremes(
            |x| self.stiffness.apply(x),
            |x| self.gram.apply(x),
            |r| g.solve(r),
            &self.mass_ones,
            self.max_only(),
        )?;
        let l2_vs_grad = generalized_extremes(
            |x| self.mass.apply(x),
            |x| self.stiffness.apply(x),
            |r| k.solve(r),
            &self.mass_ones,
            self.max_only(),
        )?;
        Ok(grad_vs_norm.max.sqrt().max(l2_vs_grad.max.sqrt()))
    }

    /// `C_I` as the larger of `||I_H v|| / ||v||` and `||I_H v - v|| / (H ||grad v||)`.
    pub fn interpolation(&self, nudging: &CellAverageNudging) -> Result<f64> {
        let solver = SymmetricSolver::new(self.asm.pattern())?;
        let m = solver.factor(&self.mass.matrix)?;
        let k = self.pinned(&self.stiffness)?;
        let stable = generalized_extremes(
            |x| nudging.apply(x),
            |x| self.mass.apply(x),
            |r| m.solve(r),
            &self.mass_ones,
            self.max_only(),
        )?;
        let residual = |x: &[f64]| {
            let mut y = self.mass.apply(x);
            for (yi, ni) in y.iter_mut().zip(nudging.apply(x)) {
                *yi -= ni;
            }
            y
        };
        let approx = generalized_extremes(residual, |x| self.stiffness.apply(x), |r| k.solve(r), &self.mass_ones, self.max_only())?;
        let h = nudging.grid().spacing();
        Ok(stable.max.max(0.0).sqrt().max(approx.max.max(0.0).sqrt() / h))
    }

    /// Exact supremum of `|(grad w, grad v)| / (||w||_{2,h} ||v||)`, attained at `v = M^-1 K w`.
    pub fn grad_split_supremum(&self) -> Result<f64> {
        let solver = SymmetricSolver::new(self.asm.pattern())?;
        let m = solver.factor(&self.mass.matrix)?;
        let g = self.pinned(&self.gram)?;
        let e = generalized_extremes(
            |x| self.stiffness.apply(&m.solve(&self.stiffness.apply(x))),
            |x| self.gram.apply(x),
            |r| g.solve(r),
            &self.mass_ones,
            self.max_only(),
        )?;
        Ok(e.max.max(0.0).sqrt())
    }
}

/// Estimates every constant; the trajectory supplies the data-dependent ones.
pub fn estimate_constants(
    ctx: &SpectralContext<'_>,
    nudging: Option<&CellAverageNudging>,
    trajectory: &[Field],
) -> Result<AnalysisConstants> {
    let cc = ctx.coercivity_continuity()?;
    let c_p = ctx.poincare()?;
    let c_i = match nudging {
        Some(n) => ctx.interpolation(n)?,
        None => 1.0,
    };
    let c_inf = trajectory.iter().map(Field::max_abs).fold(0.0, f64::max);
    let c_data = trajectory.iter().map(|f| l2_norm(&ctx.mass, f)).fold(0.0, f64::max);
    Ok(AnalysisConstants {
        c_coer: cc.min,
        c_cont: cc.max,
        c_p,
        c_i,
        c_inf,
        c_data,
        c_data_prime: c_inf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSplitReport {
    pub max_ratio: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub bound: f64,
}

impl GradSplitReport {
    pub fn holds(&self) -> bool {
        self.max_ratio <= self.bound + 1e-10
    }
}

/// Samples `|(grad w, grad v)| / (||w||_{2,h} ||v||)` over random pairs.
///
/// Half the `w` are nodal noise and half smooth random trigonometric sums;
/// every fourth pair uses `v = w`.
pub fn verify_grad_split(asm: &Assembler, sigma: Penalty, samples: usize, seed: u64) -> GradSplitReport {
    let space = asm.space();
    let mass = asm.assemble_mass();
    let stiff = asm.assemble_stiffness();
    let gram = asm.assemble_norm_gram(sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, smooth: bool| -> Field {
        if smooth {
            let modes: Vec<(f64, f64, f64, f64, f64)> = (0..6)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0..5) as f64,
                        rng.random_range(0..5) as f64,
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            space.interpolate(|p| {
                modes
                    .iter()
                    .map(|&(a, kx, ky, px, py)| {
                        let pi = std::f64::consts::PI;
                        a * (kx * pi * p[0] + px).cos() * (ky * pi * p[1] + py).cos()
                    })
                    .sum::<f64>()
                    .tanh()
            })
        } else {
            Field::from_coeffs((0..space.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect())
        }
    };
    let mut max_ratio = 0.0f64;
    let (mut used, mut skipped) = (0, 0);
    for s in 0..samples {
        let w = draw(&mut rng, s % 2 == 0);
        let v = if s % 4 == 3 { w.clone() } else { draw(&mut rng, s % 3 == 0) };
        let wn = gram.energy(w.coeffs()).max(0.0).sqrt();
        let vn = l2_norm(&mass, &v);
        if wn < 1e-14 || vn < 1e-14 {
            skipped += 1;
            continue;
        }
        let ratio = stiff.matrix.bilinear(w.coeffs(), v.coeffs()).abs() / (wn * vn);
        max_ratio = max_ratio.max(ratio);
        used += 1;
    }
    GradSplitReport {
        max_ratio,
        samples_used: used,
        samples_skipped: skipped,
        bound: std::f64::consts::SQRT_2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayStatus {
    Decaying,
    NonDecaying,
    /// Identically zero series: nothing to fit.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Slope of `ln(e_m - plateau)` per step; negative when decaying.
    pub rate: f64,
    /// Per-step contraction factor `exp(-rate)`, the `1 + lambda dt` of the envelope.
    pub ratio: f64,
    pub plateau: f64,
    pub window: (usize, usize),
    pub status: DecayStatus,
}

/// Fits `e_m ~ a r^-m + plateau`.
///
/// The plateau is the median of the last tenth of the series. The fit window
/// runs from index 2 up to the first value below ten times the plateau.
pub fn fit_decay_envelope(series: &[f64]) -> Result<DecayFit> {
    if series.len() < 20 {
        return Err(Error::InvalidParameter(format!(
            "decay fit needs at least 20 values, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("decay series"));
    }
    let tail_len = (series.len() / 10).max(1);
    let mut tail = series[series.len() - tail_len..].to_vec();
    tail.sort_by(f64::total_cmp);
    let plateau = if tail_len % 2 == 1 {
        tail[tail_len / 2]
    } else {
        0.5 * (tail[tail_len / 2 - 1] + tail[tail_len / 2])
    };
    let start = 2;
    if series.iter().all(|&v| v == 0.0) {
        return Ok(DecayFit {
            rate: f64::NAN,
            ratio: f64::NAN,
            plateau,
            window: (start, start),
            status: DecayStatus::Degenerate,
        });
    }
    let end = series[start..]
        .iter()
        .position(|&v| v < 10.0 * plateau)
        .map_or(series.len(), |k| start + k);
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&m| series[m] > plateau)
        .map(|m| (m as f64, (series[m] - plateau).ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(DecayFit {
            rate: 0.0,
            ratio: 1.0,
            plateau,
            window: (start, end),
            status: DecayStatus::NonDecaying,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let rate = sxy / sxx;
    Ok(DecayFit {
        rate,
        ratio: (-rate).exp(),
        plateau,
        window: (start, end),
        status: if rate < 0.0 {
            DecayStatus::Decaying
        } else {
            DecayStatus::NonDecaying
        },
    })
}

/// Mean of `log10(e)` over the samples with `t` in `[t0, t1]`.
pub fn time_averaged_log_error(times: &[f64], errors: &[f64], t0: f64, t1: f64) -> f64 {
    let vals: Vec<f64> = times
        .iter()
        .zip(errors)
        .filter(|(t, _)| **t >= t0 - 1e-12 && **t <= t1 + 1e-12)
        .map(|(_, e)| e.max(f64::MIN_POSITIVE).log10())
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// `(grad w, grad v)` using the assembled stiffness.
pub fn gradient_pairing(stiffness: &AssembledForm, w: &Field, v: &Field) -> f64 {
    dot(w.coeffs(), &stiffness.apply(v.coeffs()))
}
