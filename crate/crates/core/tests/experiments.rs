use std::fs;
use std::path::Path;

use chcda::diagnostics;
use chcda::experiments::artifacts::CSV_HEADER;
use chcda::experiments::{Experiment, RunManifest, RunSummary};

fn tiny(dir: &Path) -> RunManifest {
    let text = format!(
        "n = 4\nt_final = 0.02\nomega = 400\nh = 0.25\nomegas = 0, 400\nh_values = 0.5, 0.25\nsnapshot_times = 0, 0.01, 0.02\noutput_dir = {}\n",
        dir.display()
    );
    RunManifest::parse(&text).unwrap()
}

fn count(dir: &Path, suffix: &str) -> usize {
    fs::read_dir(dir)
        .map(|d| d.filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(suffix)).count())
        .unwrap_or(0)
}

#[test]
fn truth_starts_from_projected_cross_and_conserves_mass() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(dir.path())).unwrap();
    let truth = exp.generate_truth().unwrap();
    assert!(!truth.cached);
    assert_eq!(truth.store.fields.len(), 11);
    assert_eq!(truth.store.fields[0], exp.cross_initial().unwrap());
    let m0 = truth.log.rows[0].mass;
    for r in &truth.log.rows {
        assert!((r.mass - m0).abs() < 1e-12, "step {}: {} vs {m0}", r.step, r.mass);
    }
}

#[test]
fn persisted_truth_is_reloaded_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(dir.path())).unwrap();
    assert!(exp.load_truth().unwrap().is_none());
    let fresh = exp.truth(true).unwrap();
    let cached = exp.truth(true).unwrap();
    assert!(cached.cached);
    assert_eq!(cached.store.fields, fresh.store.fields);
    for (a, b) in cached.log.rows.iter().zip(&fresh.log.rows) {
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.energy, b.energy);
    }
    // A different time step invalidates the store.
    let mut other = tiny(dir.path());
    other.dt = 0.001;
    other.t_final = 0.02;
    assert!(Experiment::new(other).unwrap().load_truth().unwrap().is_none());
}

#[test]
fn sweep_artifacts_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny(dir.path());
    let exp = Experiment::new(manifest.clone()).unwrap();
    let truth = exp.truth(false).unwrap();
    exp.emit_truth(&truth).unwrap();
    let runs = exp.sweep_omega(&truth.store, 2).unwrap();
    assert_eq!(runs.len(), 2);
    exp.emit_runs("sweep-omega", &truth, &runs).unwrap();

    let out = dir.path();
    let hash_line = format!("# manifest_hash={}", exp.hash());
    let csv = fs::read_to_string(out.join("truth.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(hash_line.as_str()));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 11);
    assert_eq!(count(&out.join("vtk"), ".vtk"), 3);

    let sweep = out.join("sweep-omega");
    assert_eq!(count(&sweep, ".csv"), 3);
    assert_eq!(count(&sweep.join("vtk"), ".vtk"), 3 * runs.len());
    let svg = fs::read_to_string(sweep.join("error.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), runs.len());
    assert!(svg.contains(exp.hash()));
    let energy = fs::read_to_string(sweep.join("energy.svg")).unwrap();
    assert_eq!(energy.matches("<polyline").count(), runs.len() + 1);
    let vtk = fs::read_to_string(sweep.join("vtk").join(format!("{}_step000010.vtk", runs[1].label))).unwrap();
    assert!(vtk.contains(exp.hash()));
    let summary = fs::read_to_string(sweep.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + runs.len());

    let back = RunManifest::parse(&fs::read_to_string(out.join("manifest.conf")).unwrap()).unwrap();
    assert_eq!(back, manifest);
}

#[test]
fn nudging_reduces_the_error_relative_to_a_free_run() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(tiny(dir.path())).unwrap();
    let truth = exp.truth(false).unwrap();
    let free = exp.assimilate(truth.store.as_ref(), 0.0, 0.25).unwrap();
    let nudged = exp.assimilate(truth.store.as_ref(), 400.0, 0.25).unwrap();
    assert_eq!(nudged.label, Experiment::label(400.0, 4));
    let a = RunSummary::new(&free, &truth.log);
    let b = RunSummary::new(&nudged, &truth.log);
    assert!(a.completed && b.completed);
    assert_eq!(a.initial_error, b.initial_error);
    assert!(b.final_error < 0.5 * a.final_error, "{} vs {}", b.final_error, a.final_error);
    let direct = diagnostics::l2_error(&exp.forms().mass, &nudged.outcome.snapshots.last().unwrap().1, &truth.store.fields[10]);
    assert!((direct - b.final_error).abs() < 1e-12);
}
