//! Run manifests: a flat `key = value` text format.
//!
//! ```text
//! # desk-scale twin experiment
//! n = 32
//! epsilon = 0.05
//! omegas = 1, 20, 400, 1000
//! ic = random
//! ```
//!
//! Blank lines and `#` comments are ignored. Every key is optional and falls
//! back to [`RunManifest::desk`]; unknown and repeated keys are rejected.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::Penalty;
use crate::projection::DEFAULT_SEED;
use crate::stepper::StepperConfig;

/// Largest accepted mesh resolution; keeps hostile manifests from requesting
/// absurd allocations before any validation of resources.
pub const MAX_MESH_N: usize = 1024;
/// Largest accepted number of time steps.
pub const MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcKind {
    /// i.i.d. uniform nodal values, seeded.
    Random,
    /// Ritz projection of the cross profile.
    Cross,
    /// A snapshot file named by `ic_path`.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    /// Piecewise-constant L2 projection onto aligned coarse cells.
    CellAverage,
    /// `omega (v phi, v psi)` with `v` the nodal indicator of the observation points.
    Indicator,
}

impl IcKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IcKind::Random => "random",
            IcKind::Cross => "cross",
            IcKind::File => "file",
        }
    }
}

impl FromStr for IcKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(IcKind::Random),
            "cross" => Ok(IcKind::Cross),
            "file" => Ok(IcKind::File),
            _ => Err(format!("unknown initial condition `{s}` (expected random, cross or file)")),
        }
    }
}

impl ObservationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservationKind::CellAverage => "cell-average",
            ObservationKind::Indicator => "indicator",
        }
    }
}

impl FromStr for ObservationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cell-average" => Ok(ObservationKind::CellAverage),
            "indicator" => Ok(ObservationKind::Indicator),
            _ => Err(format!("unknown observation operator `{s}` (expected cell-average or indicator)")),
        }
    }
}

/// Everything needed to reproduce a truth run and its assimilated twins.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Mesh squares per side.
    pub n: usize,
    pub epsilon: f64,
    pub sigma: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Nudging strength for single runs and the H sweep.
    pub omega: f64,
    /// Observation spacing for single runs and the omega sweep.
    pub h: f64,
    pub omegas: Vec<f64>,
    pub h_values: Vec<f64>,
    /// Initial data of the assimilated runs; the truth always starts from the cross.
    pub ic: IcKind,
    pub ic_path: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub observation: ObservationKind,
}

pub const KEYS: &[&str] = &[
    "n",
    "epsilon",
    "sigma",
    "dt",
    "t_final",
    "omega",
    "h",
    "omegas",
    "h_values",
    "ic",
    "ic_path",
    "seed",
    "output_dir",
    "snapshot_times",
    "observation",
];

impl Default for RunManifest {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunManifest {
    /// 32x32 squares, `dt = 0.002`, `T = 1`.
    pub fn desk() -> Self {
        RunManifest {
            n: 32,
            epsilon: 0.05,
            sigma: Penalty::DEFAULT.value(),
            dt: 0.002,
            t_final: 1.0,
            omega: 400.0,
            h: 0.03125,
            omegas: vec![1.0, 20.0, 400.0, 1000.0, 5000.0],
            h_values: vec![0.011049, 0.015625, 0.03125, 0.0625, 0.125],
            ic: IcKind::Random,
            ic_path: None,
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
            snapshot_times: vec![0.0, 0.002, 0.01, 0.05, 1.0],
            observation: ObservationKind::CellAverage,
        }
    }

    /// 64x64 squares (h = sqrt(2)/64) with indicator observations.
    pub fn full_scale() -> Self {
        RunManifest {
            n: 64,
            observation: ObservationKind::Indicator,
            ..Self::desk()
        }
    }

    /// Parses and validates a manifest, starting from [`RunManifest::desk`].
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_onto(Self::desk(), text)
    }

    /// Parses `text` over `base`: keys present in the text win.
    pub fn parse_onto(base: Self, text: &str) -> Result<Self> {
        let mut m = base;
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            m.set(key, value.trim()).map_err(|message| Error::Config { line, message })?;
        }
        m.validate()?;
        Ok(m)
    }

    /// Sets one field from its textual value; no cross-field validation.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "n" => self.n = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "dt" => self.dt = parse_num(key, value)?,
            "t_final" => self.t_final = parse_num(key, value)?,
            "omega" => self.omega = parse_num(key, value)?,
            "h" => self.h = parse_num(key, value)?,
            "omegas" => self.omegas = parse_list(key, value)?,
            "h_values" => self.h_values = parse_list(key, value)?,
            "ic" => self.ic = value.parse()?,
            "ic_path" => {
                if value.is_empty() {
                    return Err("ic_path must not be empty".into());
                }
                self.ic_path = Some(PathBuf::from(value));
            }
            "seed" => self.seed = parse_num(key, value)?,
            "output_dir" => {
                if value.is_empty() {
                    return Err("output_dir must not be empty".into());
                }
                self.output_dir = PathBuf::from(value);
            }
            "snapshot_times" => self.snapshot_times = parse_list(key, value)?,
            "observation" => self.observation = value.parse()?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(2..=MAX_MESH_N).contains(&self.n) {
            return bad(format!("n must lie in 2..={MAX_MESH_N}, got {}", self.n));
        }
        Penalty::new(self.sigma)?;
        StepperConfig::new(self.dt, self.epsilon, self.omega).validate()?;
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        let ratio = self.t_final / self.dt;
        if !(ratio >= 1.0 - 1e-9 && ratio <= MAX_STEPS as f64) {
            return bad(format!("t_final / dt = {ratio} must lie in 1..={MAX_STEPS}"));
        }
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad(format!("t_final = {} is not a multiple of dt = {}", self.t_final, self.dt));
        }
        for &w in self.omegas.iter().chain([&self.omega]) {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("nudging strength must be finite and non-negative, got {w}"));
            }
        }
        for &h in self.h_values.iter().chain([&self.h]) {
            if !(h.is_finite() && h > 0.0 && h <= 1.0) {
                return bad(format!("observation spacing must lie in (0, 1], got {h}"));
            }
        }
        if self.omegas.is_empty() || self.h_values.is_empty() {
            return bad("omegas and h_values must be non-empty".into());
        }
        if self.ic == IcKind::File && self.ic_path.is_none() {
            return bad("ic = file requires ic_path".into());
        }
        for &t in &self.snapshot_times {
            self.step_of(t)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// The step whose time equals `t`, or an error if `t` is off the step grid.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let s = t / self.dt;
        if !(t.is_finite() && t >= 0.0 && t <= self.t_final * (1.0 + 1e-12)) || (s - s.round()).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "snapshot time {t} is not on the step grid of [0, {}] with dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(s.round() as usize)
    }

    /// Sorted, de-duplicated snapshot steps.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let mut v = self.snapshot_times.iter().map(|&t| self.step_of(t)).collect::<Result<Vec<_>>>()?;
        v.sort_unstable();
        v.dedup();
        Ok(v)
    }

    pub fn penalty(&self) -> Result<Penalty> {
        Penalty::new(self.sigma)
    }

    pub fn stepper_config(&self, omega: f64) -> Result<StepperConfig> {
        let mut cfg = StepperConfig::new(self.dt, self.epsilon, omega);
        cfg.sigma = self.penalty()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text; parsing it gives back an identical manifest.
    pub fn to_config_string(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "dt = {}", self.dt);
        let _ = writeln!(s, "t_final = {}", self.t_final);
        let _ = writeln!(s, "omega = {}", self.omega);
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s, "omegas = {}", list(&self.omegas));
        let _ = writeln!(s, "h_values = {}", list(&self.h_values));
        let _ = writeln!(s, "ic = {}", self.ic.as_str());
        if let Some(p) = &self.ic_path {
            let _ = writeln!(s, "ic_path = {}", p.display());
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "snapshot_times = {}", list(&self.snapshot_times));
        let _ = writeln!(s, "observation = {}", self.observation.as_str());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_config_string().as_bytes()))
    }

    /// Hash of the fields that determine the truth trajectory.
    pub fn truth_key(&self) -> String {
        let text = format!(
            "n = {}\nepsilon = {}\nsigma = {}\ndt = {}\nt_final = {}\n",
            self.n, self.epsilon, self.sigma, self.dt, self.t_final
        );
        hex(&Sha256::digest(text.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("cannot parse `{value}` as a value for `{key}`"))
}

fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<f64>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|item| parse_num(key, item.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_desk_default() {
        assert_eq!(RunManifest::parse("").unwrap(), RunManifest::desk());
        assert_eq!(RunManifest::parse("# nothing\n\n").unwrap(), RunManifest::desk());
    }

    #[test]
    fn shipped_manifests_match_presets() {
        let desk = RunManifest::parse(include_str!("../../../../manifests/desk.conf")).unwrap();
        assert_eq!(desk, RunManifest { output_dir: "out/desk".into(), ..RunManifest::desk() });
        let full = RunManifest::parse(include_str!("../../../../manifests/full-scale.conf")).unwrap();
        assert_eq!(full, RunManifest { output_dir: "out/full-scale".into(), ..RunManifest::full_scale() });
    }

    #[test]
    fn canonical_text_round_trips() {
        for m in [RunManifest::desk(), RunManifest::full_scale()] {
            assert_eq!(RunManifest::parse(&m.to_config_string()).unwrap(), m);
        }
        let mut m = RunManifest::desk();
        m.ic = IcKind::File;
        m.ic_path = Some("truth/snap.chs".into());
        assert_eq!(RunManifest::parse(&m.to_config_string()).unwrap(), m);
    }

    #[test]
    fn parse_onto_keeps_base_for_absent_keys() {
        let m = RunManifest::parse_onto(RunManifest::full_scale(), "omega = 1000\n").unwrap();
        assert_eq!((m.n, m.omega), (64, 1000.0));
        assert_eq!(m.observation, ObservationKind::Indicator);
    }

    #[test]
    fn overrides_and_comments() {
        let m = RunManifest::parse("n = 16  # coarse\nomegas = 400,1000\nobservation = indicator\n").unwrap();
        assert_eq!(m.n, 16);
        assert_eq!(m.omegas, vec![400.0, 1000.0]);
        assert_eq!(m.observation, ObservationKind::Indicator);
        assert_eq!(m.steps(), 500);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = RunManifest::parse("n = 16\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = RunManifest::parse("n = 16\nn = 8\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = RunManifest::parse("dt 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }), "{e}");
    }

    #[test]
    fn validation_rejects_inconsistent_values() {
        for text in [
            "n = 1",
            "dt = 0.003",
            "snapshot_times = 0.0015",
            "snapshot_times = 2",
            "ic = file",
            "omegas =",
            "sigma = 0.5",
            "h = 0",
            "epsilon = -1",
        ] {
            assert!(RunManifest::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunManifest::desk();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.omega = 1000.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.truth_key(), b.truth_key());
        b.dt = 0.001;
        assert_ne!(a.truth_key(), b.truth_key());
    }

    #[test]
    fn snapshot_steps_are_sorted() {
        let m = RunManifest::desk();
        assert_eq!(m.snapshot_steps().unwrap(), vec![0, 1, 5, 25, 500]);
    }
}
