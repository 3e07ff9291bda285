use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chcda::experiments::{AssimilationRun, Experiment, RunManifest, RunSummary, TruthRun};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Cahn-Hilliard twin experiments with nudging toward coarse observations.
#[derive(Debug, Parser)]
#[command(name = "chcda", version, about)]
struct Cli {
    #[command(flatten)]
    opts: ManifestArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the reference trajectory from the cross and persist it.
    Truth,
    /// One assimilated run at the manifest's omega and h.
    Assimilate,
    /// Assimilated runs for every entry of h_values.
    SweepH,
    /// Assimilated runs for every entry of omegas.
    SweepOmega,
    /// Estimated analysis constants and the sufficient conditions.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    FullScale,
}

/// Flags mirror the manifest keys and override the config file.
#[derive(Debug, Args)]
struct ManifestArgs {
    /// Flat `key = value` manifest.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Defaults used for keys missing from the config file.
    #[arg(long, value_enum, default_value = "desk", global = true)]
    preset: Preset,

    /// Output root.
    #[arg(long, env = "CHCDA_OUTPUT_DIR", global = true)]
    output_dir: Option<PathBuf>,

    /// Worker threads for sweeps.
    #[arg(long, default_value_t = default_workers(), global = true)]
    workers: usize,

    /// Integrate a fresh truth even if a persisted one matches.
    #[arg(long, global = true)]
    fresh_truth: bool,

    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    dt: Option<String>,
    #[arg(long, global = true)]
    t_final: Option<String>,
    #[arg(long, global = true)]
    omega: Option<String>,
    #[arg(long, global = true)]
    h: Option<String>,
    /// Comma-separated.
    #[arg(long, global = true)]
    omegas: Option<String>,
    /// Comma-separated.
    #[arg(long, global = true)]
    h_values: Option<String>,
    /// random, cross or file.
    #[arg(long, global = true)]
    ic: Option<String>,
    #[arg(long, global = true)]
    ic_path: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Comma-separated.
    #[arg(long, global = true)]
    snapshot_times: Option<String>,
    /// cell-average or indicator.
    #[arg(long, global = true)]
    observation: Option<String>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl ManifestArgs {
    fn manifest(&self) -> Result<RunManifest> {
        let base = match self.preset {
            Preset::Desk => RunManifest::desk(),
            Preset::FullScale => RunManifest::full_scale(),
        };
        let mut m = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                RunManifest::parse_onto(base, &text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => base,
        };
        let flags = [
            ("n", &self.n),
            ("epsilon", &self.epsilon),
            ("sigma", &self.sigma),
            ("dt", &self.dt),
            ("t_final", &self.t_final),
            ("omega", &self.omega),
            ("h", &self.h),
            ("omegas", &self.omegas),
            ("h_values", &self.h_values),
            ("ic", &self.ic),
            ("ic_path", &self.ic_path),
            ("seed", &self.seed),
            ("snapshot_times", &self.snapshot_times),
            ("observation", &self.observation),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                m.set(key, v.trim()).map_err(|e| anyhow::anyhow!("--{}: {e}", key.replace('_', "-")))?;
            }
        }
        if let Some(dir) = &self.output_dir {
            m.output_dir = dir.clone();
        }
        m.validate()?;
        Ok(m)
    }
}

fn truth(exp: &Experiment, fresh: bool) -> Result<TruthRun> {
    if !fresh {
        if let Some(t) = exp.load_truth()? {
            eprintln!("using persisted truth under {}", exp.truth_dir().display());
            return Ok(t);
        }
    }
    eprintln!("integrating truth: n = {}, {} steps", exp.manifest().n, exp.manifest().steps());
    let t = exp.generate_truth()?;
    exp.persist_truth(&t)?;
    Ok(t)
}

fn print_summaries(truth: &TruthRun, runs: &[AssimilationRun]) {
    println!("label,completed,initial_error,final_error,reduction,decay_rate,tail_log10_error,energy_gap,converged");
    for r in runs {
        let s = RunSummary::new(r, &truth.log);
        println!(
            "{},{},{:.3e},{:.3e},{:.3e},{:.4},{:.3},{:.3e},{}",
            s.label,
            s.completed,
            s.initial_error,
            s.final_error,
            s.reduction,
            s.decay.as_ref().map_or(f64::NAN, |d| d.rate),
            s.tail_log_error,
            s.energy_gap,
            s.converged()
        );
    }
}

fn run(cli: Cli) -> Result<bool> {
    let manifest = cli.opts.manifest()?;
    let exp = Experiment::new(manifest)?;
    eprintln!("manifest_hash={}", exp.hash());
    let fresh = cli.opts.fresh_truth;
    let runs = match cli.command {
        Command::Truth => {
            let t = truth(&exp, true)?;
            let written = exp.emit_truth(&t)?;
            eprintln!("wrote {} files under {}", written.len(), exp.manifest().output_dir.display());
            return Ok(true);
        }
        Command::Report => {
            let t = truth(&exp, fresh)?;
            let report = exp.report(Some(&t))?;
            print!("{report}");
            let p = exp.emit_report(&report)?;
            eprintln!("wrote {}", p.display());
            return Ok(true);
        }
        Command::Assimilate => {
            let t = truth(&exp, fresh)?;
            let m = exp.manifest();
            let r = exp.assimilate(t.store.as_ref(), m.omega, m.h)?;
            ("assimilate", t, vec![r])
        }
        Command::SweepH => {
            let t = truth(&exp, fresh)?;
            let r = exp.sweep_h(&t.store, cli.opts.workers)?;
            ("sweep_h", t, r)
        }
        Command::SweepOmega => {
            let t = truth(&exp, fresh)?;
            let r = exp.sweep_omega(&t.store, cli.opts.workers)?;
            ("sweep_omega", t, r)
        }
    };
    let (name, t, runs) = runs;
    let written = exp.emit_runs(name, &t, &runs)?;
    print_summaries(&t, &runs);
    eprintln!("wrote {} files under {}", written.len(), exp.manifest().output_dir.join(name).display());
    let mut ok = true;
    for r in &runs {
        if let chcda::stepper::RunStatus::Failed { step, message } = &r.outcome.log.status {
            eprintln!("run {} failed at step {step}: {message}", r.label);
            ok = false;
        }
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
