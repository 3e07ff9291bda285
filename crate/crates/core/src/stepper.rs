//! Backward-Euler stepping of the nudged scheme with Newton's method.

use std::sync::Arc;

use crate::diagnostics::{self, AnalysisConstants};
use crate::error::{Error, Result};
use crate::forms::{Assembler, ConstantForms, Penalty, SchemeParams};
use crate::linalg::{gmres, GeneralSolver};
use crate::observation::Nudging;
use crate::space::Field;
use crate::sparse::norm2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub epsilon: f64,
    pub omega: f64,
    pub sigma: Penalty,
    /// Absolute bound on the residual 2-norm, scaled by `max(1, ||R(phi_prev)||)`.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Relative residual of the inner linear solves.
    pub linear_tol: f64,
}

impl StepperConfig {
    pub fn new(dt: f64, epsilon: f64, omega: f64) -> Self {
        StepperConfig {
            dt,
            epsilon,
            omega,
            sigma: Penalty::DEFAULT,
            newton_tol: 1e-10,
            newton_max: 30,
            linear_tol: 1e-11,
        }
    }

    pub fn params(&self) -> SchemeParams {
        SchemeParams {
            dt: self.dt,
            epsilon: self.epsilon,
            omega: self.omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        for (name, v) in [("newton_tol", self.newton_tol), ("linear_tol", self.linear_tol)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.newton_max == 0 {
            return Err(Error::InvalidParameter("newton_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub newton_iters: usize,
    pub residual: f64,
    /// Residual norms from the initial guess to the accepted iterate.
    pub residual_history: Vec<f64>,
    pub line_search_halvings: usize,
    pub linear_iters: usize,
}

/// Supplies the reference trajectory, one snapshot per step.
pub trait TruthSource: Sync {
    /// Index of the last available snapshot.
    fn last_step(&self) -> usize;
    fn snapshot(&self, step: usize) -> Result<Field>;
}

/// Trajectory held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryTruth {
    pub fields: Vec<Field>,
}

impl TruthSource for MemoryTruth {
    fn last_step(&self) -> usize {
        self.fields.len().saturating_sub(1)
    }

    fn snapshot(&self, step: usize) -> Result<Field> {
        self.fields.get(step).cloned().ok_or(Error::MissingSnapshot(step))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub t: f64,
    /// `NaN` when no truth is attached.
    pub l2_error: f64,
    pub energy: f64,
    pub mass: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { step: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub manifest_hash: String,
    pub status: RunStatus,
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2_error).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub final_field: Field,
    /// `(step, field)` for every requested snapshot step reached.
    pub snapshots: Vec<(usize, Field)>,
}

/// Cached operators and factorization structure for repeated steps.
pub struct Stepper {
    asm: Arc<Assembler>,
    forms: Arc<ConstantForms>,
    nudging: Option<Arc<Nudging>>,
    solver: GeneralSolver,
    cfg: StepperConfig,
}

impl Stepper {
    pub fn new(asm: Arc<Assembler>, forms: Arc<ConstantForms>, nudging: Option<Arc<Nudging>>, cfg: StepperConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.omega > 0.0 && nudging.is_none() {
            return Err(Error::InvalidParameter("omega > 0 requires an observation operator".into()));
        }
        if forms.sigma != cfg.sigma {
            return Err(Error::InvalidParameter(format!(
                "forms assembled with sigma {} but configuration asks for {}",
                forms.sigma.value(),
                cfg.sigma.value()
            )));
        }
        let solver = GeneralSolver::new(asm.pattern())?;
        Ok(Stepper {
            asm,
            forms,
            nudging,
            solver,
            cfg,
        })
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    pub fn assembler(&self) -> &Arc<Assembler> {
        &self.asm
    }

    pub fn forms(&self) -> &ConstantForms {
        &self.forms
    }

    pub fn nudging(&self) -> Option<&Nudging> {
        self.nudging.as_deref()
    }

    pub fn residual(&self, phi: &Field, phi_prev: &Field, obs_rhs: Option<&[f64]>) -> Result<Vec<f64>> {
        self.asm
            .residual(&self.forms, self.nudging(), self.cfg.params(), phi, phi_prev, obs_rhs)
    }

    /// Solves `J delta = -r`. The sparse part of `J` is factored directly; a
    /// low-rank nudging part is absorbed by GMRES preconditioned with that
    /// factor, which needs few iterations since `0 <= N <= M`.
    fn newton_direction(&self, phi: &Field, r: &[f64]) -> Result<(Vec<f64>, usize)> {
        let jac = self.asm.jacobian(&self.forms, self.nudging(), self.cfg.params(), phi)?;
        let factor = self.solver.factor(&jac.sparse.matrix)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut delta = factor.solve(&rhs);
        let stats = gmres(
            |x, y| jac.apply_into(x, y),
            |x| factor.solve(x),
            &rhs,
            &mut delta,
            self.cfg.linear_tol,
            40,
            400,
        )?;
        Ok((delta, stats.iterations))
    }

    /// One step from `phi_prev` with observation load `obs_rhs`.
    pub fn step(&self, phi_prev: &Field, obs_rhs: Option<&[f64]>) -> Result<(Field, StepStats)> {
        let mut phi = phi_prev.clone();
        let mut r = self.residual(&phi, phi_prev, obs_rhs)?;
        let mut rnorm = norm2(&r);
        let tol = self.cfg.newton_tol * rnorm.max(1.0);
        let mut stats = StepStats {
            newton_iters: 0,
            residual: rnorm,
            residual_history: vec![rnorm],
            line_search_halvings: 0,
            linear_iters: 0,
        };
        while rnorm > tol {
            if stats.newton_iters == self.cfg.newton_max {
                return Err(Error::NewtonDiverged {
                    step: 0,
                    iterations: stats.newton_iters,
                    residual: rnorm,
                });
            }
            let (delta, lin) = self.newton_direction(&phi, &r)?;
            stats.linear_iters += lin;
            let mut alpha = 1.0;
            let (mut cand, mut cand_r, mut cand_norm);
            loop {
                cand = phi.clone();
                for (c, d) in cand.coeffs_mut().iter_mut().zip(&delta) {
                    *c += alpha * d;
                }
                cand_r = self.residual(&cand, phi_prev, obs_rhs);
                cand_norm = cand_r.as_ref().map_or(f64::INFINITY, |v| norm2(v));
                if cand_norm <= rnorm || alpha < 1.0 / 1024.0 {
                    break;
                }
                alpha *= 0.5;
                stats.line_search_halvings += 1;
            }
            phi = cand;
            r = cand_r?;
            rnorm = cand_norm;
            stats.newton_iters += 1;
            stats.residual = rnorm;
            stats.residual_history.push(rnorm);
            if !rnorm.is_finite() {
                return Err(Error::NonFinite("Newton iterate"));
            }
        }
        Ok((phi, stats))
    }

    /// Runs `steps` steps from `phi0`, nudging toward `truth` when `omega > 0`
    /// and logging the error against it whenever it is attached.
    pub fn run(
        &self,
        phi0: Field,
        truth: Option<&dyn TruthSource>,
        steps: usize,
        snapshot_steps: &[usize],
        mut on_row: impl FnMut(&LogRow),
    ) -> RunOutcome {
        let mass_form = &self.forms.mass;
        let eps = self.cfg.epsilon;
        let mut rows = Vec::with_capacity(steps + 1);
        let mut snapshots = Vec::new();
        let row = |step: usize, phi: &Field, iters: usize| -> Result<LogRow> {
            let l2_error = match truth {
                Some(src) => diagnostics::l2_error(mass_form, phi, &src.snapshot(step)?),
                None => f64::NAN,
            };
            Ok(LogRow {
                step,
                t: step as f64 * self.cfg.dt,
                l2_error,
                energy: diagnostics::energy(&self.asm, phi, eps),
                mass: diagnostics::mass(mass_form, phi),
                newton_iters: iters,
            })
        };
        let fail = |rows: Vec<LogRow>, snapshots, phi: Field, step: usize, e: Error| RunOutcome {
            log: RunLog {
                rows,
                manifest_hash: String::new(),
                status: RunStatus::Failed {
                    step,
                    message: e.to_string(),
                },
            },
            final_field: phi,
            snapshots,
        };

        let mut phi = phi0;
        match row(0, &phi, 0) {
            Ok(r) => {
                on_row(&r);
                rows.push(r);
            }
            Err(e) => return fail(rows, snapshots, phi, 0, e),
        }
        if snapshot_steps.contains(&0) {
            snapshots.push((0, phi.clone()));
        }
        for m in 1..=steps {
            let obs = if self.cfg.omega > 0.0 {
                let src = match truth {
                    Some(src) => src,
                    None => return fail(rows, snapshots, phi, m, Error::MissingSnapshot(m)),
                };
                let nudging = self.nudging().expect("checked at construction");
                match src.snapshot(m).and_then(|f| nudging.observation_rhs(&f, self.cfg.omega)) {
                    Ok(v) => Some(v),
                    Err(e) => return fail(rows, snapshots, phi, m, e),
                }
            } else {
                None
            };
            let (next, stats) = match self.step(&phi, obs.as_deref()) {
                Ok(v) => v,
                Err(Error::NewtonDiverged { iterations, residual, .. }) => {
                    let e = Error::NewtonDiverged {
                        step: m,
                        iterations,
                        residual,
                    };
                    return fail(rows, snapshots, phi, m, e);
                }
                Err(e) => return fail(rows, snapshots, phi, m, e),
            };
            phi = next;
            match row(m, &phi, stats.newton_iters) {
                Ok(r) => {
                    on_row(&r);
                    rows.push(r);
                }
                Err(e) => return fail(rows, snapshots, phi, m, e),
            }
            if snapshot_steps.contains(&m) {
                snapshots.push((m, phi.clone()));
            }
        }
        RunOutcome {
            log: RunLog {
                rows,
                manifest_hash: String::new(),
                status: RunStatus::Completed,
            },
            final_field: phi,
            snapshots,
        }
    }
}

/// The sufficient conditions of the analysis, evaluated for given constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// Stability rate; the bound needs it positive.
    pub lambda0: f64,
    /// Error-decay rate; the bound needs it positive.
    pub lambda1: f64,
    /// `(1/dt + omega) - (C_I^2 C_P^2 H^2 omega^2 + 18 C_inf^4) / (C_coer eps^2)`; uniqueness needs it positive.
    pub uniqueness_margin: f64,
    pub h_obs: f64,
    pub constants: AnalysisConstants,
}

impl ConditionReport {
    pub fn stability_holds(&self) -> bool {
        self.lambda0 > 0.0
    }

    pub fn decay_holds(&self) -> bool {
        self.lambda1 > 0.0
    }

    pub fn uniqueness_holds(&self) -> bool {
        self.uniqueness_margin > 0.0
    }
}

pub fn condition_report(cfg: &StepperConfig, h_obs: f64, c: AnalysisConstants) -> ConditionReport {
    let (w, dt) = (cfg.omega, cfg.dt);
    let ce2 = c.c_coer * cfg.epsilon * cfg.epsilon;
    let ip_h2 = c.c_i * c.c_i * c.c_p * c.c_p * h_obs * h_obs;
    let lambda0 = (w * ce2 - 2.0 * w * w * ip_h2 - 4.0) / (ce2 + 4.0 * dt);
    let s = c.c_inf * c.c_inf + c.c_data_prime * c.c_data_prime;
    let lambda1 = (ce2 * w - 4.0 * ip_h2 * w * w - 72.0 * s * s - 16.0) / (ce2 + 16.0 * dt);
    let uniqueness_margin = (1.0 / dt + w) - (ip_h2 * w * w + 18.0 * c.c_inf.powi(4)) / ce2;
    ConditionReport {
        lambda0,
        lambda1,
        uniqueness_margin,
        h_obs,
        constants: c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_lambda0() {
        let cfg = StepperConfig::new(0.002, 0.05, 400.0);
        let r = condition_report(&cfg, 0.01, AnalysisConstants::textbook());
        assert!((r.lambda0 + 3333.333333333).abs() < 1e-6, "{}", r.lambda0);
        assert!(!r.stability_holds());
        let cfg0 = StepperConfig::new(0.002, 0.05, 0.0);
        let r0 = condition_report(&cfg0, 0.01, AnalysisConstants::textbook());
        assert!((r0.lambda0 + 4.0 / (0.0025 + 0.008)).abs() < 1e-9);
        // small H and large omega C_coer eps^2
        let big = StepperConfig::new(0.002, 0.05, 4000.0);
        assert!(condition_report(&big, 1e-4, AnalysisConstants::textbook()).lambda0 > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::new(0.002, 0.05, 400.0).validate().is_ok());
        assert!(StepperConfig::new(0.0, 0.05, 400.0).validate().is_err());
        assert!(StepperConfig::new(0.002, -1.0, 400.0).validate().is_err());
        assert!(StepperConfig::new(0.002, 0.05, -1.0).validate().is_err());
        let mut c = StepperConfig::new(0.002, 0.05, 1.0);
        c.newton_tol = 1.0;
        assert!(c.validate().is_err());
    }
}
