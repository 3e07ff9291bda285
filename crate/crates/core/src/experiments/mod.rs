//! Twin experiments: a truth run from the cross, assimilated runs from wrong
//! initial data, parameter sweeps and their artifacts.

pub mod artifacts;
pub mod manifest;
pub mod snapshot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{self, fit_decay_envelope, time_averaged_log_error, AnalysisConstants, DecayFit, SpectralContext};
use crate::error::{Error, Result};
use crate::forms::{Assembler, ConstantForms, Penalty};
use crate::observation::{nearest_aligned_cells, CellAverageNudging, CoarseGrid, IndicatorNudging, Nudging};
use crate::projection::{random_field, ritz_project, CrossProfile};
use crate::space::{Field, Space};
use crate::stepper::{condition_report, ConditionReport, LogRow, MemoryTruth, RunLog, RunOutcome, RunStatus, Stepper, TruthSource};

pub use artifacts::{Axis, CSV_HEADER};
pub use manifest::{IcKind, ObservationKind, RunManifest};
pub use snapshot::{DiskTruth, Snapshot};

/// Error reduction over the run that counts as convergence.
pub const CONVERGENCE_FACTOR: f64 = 1e3;

/// Reference trajectory shared by every assimilated run.
#[derive(Debug, Clone)]
pub struct TruthRun {
    pub store: Arc<MemoryTruth>,
    pub log: RunLog,
    /// Loaded from a persisted store rather than integrated; Newton counts are then zero.
    pub cached: bool,
}

#[derive(Debug, Clone)]
pub struct AssimilationRun {
    pub label: String,
    pub omega: f64,
    /// Requested observation spacing.
    pub h: f64,
    /// Observation cells per side actually used.
    pub cells: usize,
    pub outcome: RunOutcome,
}

/// Scalar verdicts on one assimilated run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub omega: f64,
    pub h: f64,
    pub cells: usize,
    pub completed: bool,
    pub initial_error: f64,
    pub final_error: f64,
    /// `initial_error / final_error`.
    pub reduction: f64,
    pub decay: Option<DecayFit>,
    /// Mean `log10` error over the second half of the run.
    pub tail_log_error: f64,
    /// Relative energy gap to the truth at the final time.
    pub energy_gap: f64,
}

impl RunSummary {
    pub fn new(run: &AssimilationRun, truth: &RunLog) -> Self {
        let log = &run.outcome.log;
        let errors = log.errors();
        let initial_error = errors.first().copied().unwrap_or(f64::NAN);
        let final_error = errors.last().copied().unwrap_or(f64::NAN);
        let t_end = log.rows.last().map_or(0.0, |r| r.t);
        let energy_gap = match (log.rows.last(), truth.rows.get(log.rows.len().wrapping_sub(1))) {
            (Some(a), Some(b)) => (a.energy - b.energy).abs() / b.energy.abs(),
            _ => f64::NAN,
        };
        RunSummary {
            label: run.label.clone(),
            omega: run.omega,
            h: run.h,
            cells: run.cells,
            completed: log.completed(),
            initial_error,
            final_error,
            reduction: initial_error / final_error,
            decay: fit_decay_envelope(&errors).ok(),
            tail_log_error: time_averaged_log_error(&log.times(), &errors, 0.5 * t_end, t_end),
            energy_gap,
        }
    }

    /// Completed, error reduced by [`CONVERGENCE_FACTOR`], and a negative fitted rate.
    pub fn converged(&self) -> bool {
        self.completed && self.reduction >= CONVERGENCE_FACTOR && self.decay.as_ref().is_some_and(|d| d.rate < 0.0)
    }
}

/// Estimated and textbook sufficient conditions for one `(omega, H)` pair.
#[derive(Debug, Clone, Copy)]
pub struct ReportRow {
    pub omega: f64,
    pub h: f64,
    pub cells: usize,
    pub estimated: ConditionReport,
    pub textbook: ConditionReport,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub manifest_hash: String,
    pub rows: Vec<ReportRow>,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# manifest_hash={}", self.manifest_hash)?;
        if let Some(r) = self.rows.first() {
            let c = r.estimated.constants;
            writeln!(
                f,
                "constants: C_coer={:.6} C_cont={:.6} C_P={:.6} C_inf={:.6} C_data={:.6}",
                c.c_coer, c.c_cont, c.c_p, c.c_inf, c.c_data
            )?;
        }
        writeln!(f, "omega,h,cells,c_i,lambda0,lambda1,uniqueness,lambda0_textbook,lambda1_textbook,uniqueness_textbook")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{:.6},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
                r.omega,
                r.h,
                r.cells,
                r.estimated.constants.c_i,
                r.estimated.lambda0,
                r.estimated.lambda1,
                r.estimated.uniqueness_margin,
                r.textbook.lambda0,
                r.textbook.lambda1,
                r.textbook.uniqueness_margin
            )?;
        }
        Ok(())
    }
}

/// Mesh, operators and manifest shared by all runs of one experiment.
pub struct Experiment {
    manifest: RunManifest,
    hash: String,
    space: Arc<Space>,
    asm: Arc<Assembler>,
    forms: Arc<ConstantForms>,
    sigma: Penalty,
}

impl Experiment {
    pub fn new(manifest: RunManifest) -> Result<Self> {
        manifest.validate()?;
        let sigma = manifest.penalty()?;
        let space = Arc::new(Space::uniform(manifest.n)?);
        let asm = Arc::new(Assembler::new(space.clone()));
        let forms = Arc::new(asm.constant_forms(sigma));
        Ok(Experiment {
            hash: manifest.hash(),
            manifest,
            space,
            asm,
            forms,
            sigma,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn assembler(&self) -> &Arc<Assembler> {
        &self.asm
    }

    pub fn forms(&self) -> &Arc<ConstantForms> {
        &self.forms
    }

    pub fn truth_dir(&self) -> PathBuf {
        self.manifest.output_dir.join("truth")
    }

    /// Ritz projection of the cross profile.
    pub fn cross_initial(&self) -> Result<Field> {
        let cross = CrossProfile::new(self.manifest.epsilon)?;
        Ok(ritz_project(&self.asm, &self.forms.cip, &cross, self.sigma)?.field)
    }

    /// Initial data of the assimilated runs.
    pub fn initial_field(&self) -> Result<Field> {
        match self.manifest.ic {
            IcKind::Random => Ok(random_field(&self.space, self.manifest.seed)),
            IcKind::Cross => self.cross_initial(),
            IcKind::File => {
                let path = self.manifest.ic_path.as_deref().expect("validated manifest");
                let snap = snapshot::read_snapshot(path)?;
                self.space.check_field(&snap.field)?;
                Ok(snap.field)
            }
        }
    }

    /// Integrates the truth with no nudging, keeping every step.
    pub fn generate_truth(&self) -> Result<TruthRun> {
        let stepper = Stepper::new(self.asm.clone(), self.forms.clone(), None, self.manifest.stepper_config(0.0)?)?;
        let steps = self.manifest.steps();
        let all: Vec<usize> = (0..=steps).collect();
        let mut out = stepper.run(self.cross_initial()?, None, steps, &all, |_| {});
        if let RunStatus::Failed { step, message } = &out.log.status {
            return Err(Error::RunFailed {
                label: "truth".into(),
                step: *step,
                message: message.clone(),
            });
        }
        out.log.manifest_hash = self.hash.clone();
        let fields = out.snapshots.into_iter().map(|(_, f)| f).collect();
        Ok(TruthRun {
            store: Arc::new(MemoryTruth { fields }),
            log: out.log,
            cached: false,
        })
    }

    pub fn persist_truth(&self, truth: &TruthRun) -> Result<DiskTruth> {
        DiskTruth::persist(&self.truth_dir(), &self.manifest.truth_key(), self.manifest.dt, &truth.store.fields)
    }

    /// Loads a persisted truth matching this manifest, if one exists.
    pub fn load_truth(&self) -> Result<Option<TruthRun>> {
        let Some(disk) = DiskTruth::open(&self.truth_dir(), &self.manifest.truth_key(), self.space.n_dofs(), self.manifest.steps())? else {
            return Ok(None);
        };
        let store = disk.load()?;
        let rows = store
            .fields
            .iter()
            .enumerate()
            .map(|(step, f)| LogRow {
                step,
                t: step as f64 * self.manifest.dt,
                l2_error: f64::NAN,
                energy: diagnostics::energy(&self.asm, f, self.manifest.epsilon),
                mass: diagnostics::mass(&self.forms.mass, f),
                newton_iters: 0,
            })
            .collect();
        Ok(Some(TruthRun {
            store: Arc::new(store),
            log: RunLog {
                rows,
                manifest_hash: self.hash.clone(),
                status: RunStatus::Completed,
            },
            cached: true,
        }))
    }

    /// A persisted truth when available, otherwise a fresh one (persisted if asked).
    pub fn truth(&self, persist: bool) -> Result<TruthRun> {
        if let Some(t) = self.load_truth()? {
            return Ok(t);
        }
        let t = self.generate_truth()?;
        if persist {
            self.persist_truth(&t)?;
        }
        Ok(t)
    }

    /// Observation operator for spacing `h`, snapped to the nearest aligned grid.
    pub fn nudging(&self, h: f64) -> Result<(usize, Nudging)> {
        let cells = nearest_aligned_cells(self.manifest.n, h);
        let grid = CoarseGrid::new(&self.space, cells)?;
        let op = match self.manifest.observation {
            ObservationKind::CellAverage => Nudging::CellAverage(CellAverageNudging::new(&self.space, grid)?),
            ObservationKind::Indicator => {
                Nudging::Indicator(IndicatorNudging::at_cell_centers(&self.space, &grid, self.asm.pattern().clone())?)
            }
        };
        Ok((cells, op))
    }

    pub fn label(omega: f64, cells: usize) -> String {
        format!("omega{omega}_cells{cells}")
    }

    /// One assimilated run. Solver failures are recorded in the log, not returned.
    pub fn assimilate(&self, truth: &dyn TruthSource, omega: f64, h: f64) -> Result<AssimilationRun> {
        let steps = self.manifest.steps();
        if truth.last_step() < steps {
            return Err(Error::MissingSnapshot(truth.last_step() + 1));
        }
        let (cells, op) = self.nudging(h)?;
        let nudging = (omega > 0.0).then(|| Arc::new(op));
        let stepper = Stepper::new(self.asm.clone(), self.forms.clone(), nudging, self.manifest.stepper_config(omega)?)?;
        let mut outcome = stepper.run(self.initial_field()?, Some(truth), steps, &self.manifest.snapshot_steps()?, |_| {});
        outcome.log.manifest_hash = self.hash.clone();
        Ok(AssimilationRun {
            label: Self::label(omega, cells),
            omega,
            h,
            cells,
            outcome,
        })
    }

    /// Runs every `(omega, h)` pair against the same truth on `workers` threads.
    pub fn run_many(&self, truth: &MemoryTruth, pairs: &[(f64, f64)], workers: usize) -> Result<Vec<AssimilationRun>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("cannot build worker pool: {e}")))?;
        pool.install(|| pairs.par_iter().map(|&(w, h)| self.assimilate(truth, w, h)).collect())
    }

    /// Every `h_values` entry at the manifest's `omega`.
    pub fn sweep_h(&self, truth: &MemoryTruth, workers: usize) -> Result<Vec<AssimilationRun>> {
        let pairs: Vec<(f64, f64)> = self.manifest.h_values.iter().map(|&h| (self.manifest.omega, h)).collect();
        self.run_many(truth, &pairs, workers)
    }

    /// Every `omegas` entry at the manifest's `h`.
    pub fn sweep_omega(&self, truth: &MemoryTruth, workers: usize) -> Result<Vec<AssimilationRun>> {
        let pairs: Vec<(f64, f64)> = self.manifest.omegas.iter().map(|&w| (w, self.manifest.h)).collect();
        self.run_many(truth, &pairs, workers)
    }

    /// Truth CSV (fresh runs only) and truth VTK snapshots. Returns written paths.
    pub fn emit_truth(&self, truth: &TruthRun) -> Result<Vec<PathBuf>> {
        let out = &self.manifest.output_dir;
        let mut written = Vec::new();
        if !truth.cached {
            let p = out.join("truth.csv");
            artifacts::save_log_csv(&p, &truth.log, &self.hash)?;
            written.push(p);
        }
        for step in self.manifest.snapshot_steps()? {
            let f = truth.store.snapshot(step)?;
            let p = out.join("vtk").join(format!("truth_step{step:06}.vtk"));
            let title = format!("truth t={}", step as f64 * self.manifest.dt);
            artifacts::save_vtk(&p, &self.space, &title, &self.hash, &[("phi", &f)])?;
            written.push(p);
        }
        self.write_manifest()?;
        Ok(written)
    }

    /// Per-run CSVs, error and energy plots, VTK snapshots and a summary table
    /// under `output_dir/name`. Returns written paths.
    pub fn emit_runs(&self, name: &str, truth: &TruthRun, runs: &[AssimilationRun]) -> Result<Vec<PathBuf>> {
        let dir = self.manifest.output_dir.join(name);
        let mut written = Vec::new();
        for r in runs {
            let p = dir.join(format!("{}.csv", r.label));
            artifacts::save_log_csv(&p, &r.outcome.log, &self.hash)?;
            written.push(p);
            for (step, f) in &r.outcome.snapshots {
                let t = truth.store.snapshot(*step)?;
                let mut err = f.clone();
                for (e, v) in err.coeffs_mut().iter_mut().zip(t.coeffs()) {
                    *e -= v;
                }
                let p = dir.join("vtk").join(format!("{}_step{step:06}.vtk", r.label));
                let title = format!("{} t={}", r.label, *step as f64 * self.manifest.dt);
                artifacts::save_vtk(&p, &self.space, &title, &self.hash, &[("phi", f), ("truth", &t), ("error", &err)])?;
                written.push(p);
            }
        }
        let series = |pick: fn(&LogRow) -> f64| -> Vec<(f64, f64)> { truth.log.rows.iter().map(|r| (r.t, pick(r))).collect() };
        let mut err_series = Vec::new();
        let mut energy_series = vec![("truth", series(|r| r.energy))];
        for r in runs {
            err_series.push((r.label.as_str(), r.outcome.log.rows.iter().map(|x| (x.t, x.l2_error)).collect()));
            energy_series.push((r.label.as_str(), r.outcome.log.rows.iter().map(|x| (x.t, x.energy)).collect()));
        }
        let p = dir.join("error.svg");
        artifacts::save_svg_plot(&p, &format!("{name}: L2 error"), "L2 error", Axis::Log10, &err_series, &self.hash)?;
        written.push(p);
        let p = dir.join("energy.svg");
        artifacts::save_svg_plot(&p, &format!("{name}: energy"), "energy", Axis::Linear, &energy_series, &self.hash)?;
        written.push(p);
        let p = dir.join("summary.csv");
        self.write_summary(&p, runs, &truth.log)?;
        written.push(p);
        self.write_manifest()?;
        Ok(written)
    }

    fn write_summary(&self, path: &Path, runs: &[AssimilationRun], truth: &RunLog) -> Result<()> {
        let mut s = format!(
            "# manifest_hash={}\nlabel,omega,h,cells,completed,initial_error,final_error,reduction,decay_rate,decay_ratio,plateau,tail_log10_error,energy_gap,converged\n",
            self.hash
        );
        for r in runs {
            let m = RunSummary::new(r, truth);
            let (rate, ratio, plateau) = m.decay.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN), |d| (d.rate, d.ratio, d.plateau));
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                m.label,
                m.omega,
                m.h,
                m.cells,
                m.completed,
                m.initial_error,
                m.final_error,
                m.reduction,
                rate,
                ratio,
                plateau,
                m.tail_log_error,
                m.energy_gap,
                m.converged()
            ));
        }
        write_text(path, &s)
    }

    fn write_manifest(&self) -> Result<()> {
        write_text(&self.manifest.output_dir.join("manifest.conf"), &self.manifest.to_config_string())
    }

    /// Estimated constants and the sufficient conditions for every
    /// `(omega, H)` in the manifest's lists, beside the textbook preset.
    pub fn report(&self, truth: Option<&TruthRun>) -> Result<Report> {
        let ctx = SpectralContext::new(&self.asm, self.sigma);
        let cc = ctx.coercivity_continuity()?;
        let c_p = ctx.poincare()?;
        let (c_inf, c_data) = match truth {
            Some(t) => (
                t.store.fields.iter().map(Field::max_abs).fold(0.0, f64::max),
                t.store.fields.iter().map(|f| diagnostics::l2_norm(&self.forms.mass, f)).fold(0.0, f64::max),
            ),
            None => (1.0, 1.0),
        };
        let mut hs = self.manifest.h_values.clone();
        if !hs.contains(&self.manifest.h) {
            hs.push(self.manifest.h);
        }
        let mut rows = Vec::new();
        for h in hs {
            let cells = nearest_aligned_cells(self.manifest.n, h);
            let grid = CoarseGrid::new(&self.space, cells)?;
            let h_eff = grid.spacing();
            let c_i = ctx.interpolation(&CellAverageNudging::new(&self.space, grid)?)?;
            let constants = AnalysisConstants {
                c_coer: cc.min,
                c_cont: cc.max,
                c_p,
                c_i,
                c_inf,
                c_data,
                c_data_prime: c_inf,
            };
            for &omega in &self.manifest.omegas {
                let cfg = self.manifest.stepper_config(omega)?;
                rows.push(ReportRow {
                    omega,
                    h,
                    cells,
                    estimated: condition_report(&cfg, h_eff, constants),
                    textbook: condition_report(&cfg, h_eff, AnalysisConstants::textbook()),
                });
            }
        }
        Ok(Report {
            manifest_hash: self.hash.clone(),
            rows,
        })
    }

    pub fn emit_report(&self, report: &Report) -> Result<PathBuf> {
        let p = self.manifest.output_dir.join("report.txt");
        write_text(&p, &report.to_string())?;
        self.write_manifest()?;
        Ok(p)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
