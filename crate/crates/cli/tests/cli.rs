use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "n = 4\nt_final = 0.01\nomega = 400\nh = 0.25\nomegas = 10, 400\nh_values = 0.5, 0.25\nsnapshot_times = 0, 0.01\n";

fn chcda(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("tiny.conf");
    if !config.exists() {
        fs::write(&config, TINY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_chcda"))
        .arg("--config")
        .arg(&config)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .arg("--workers")
        .arg("1")
        .args(args)
        .env_remove("CHCDA_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn truth_then_sweep_reuses_the_persisted_truth() {
    let dir = tempfile::tempdir().unwrap();
    let o = chcda(dir.path(), &["truth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    assert!(out.join("truth.csv").exists());
    assert!(out.join("manifest.conf").exists());
    assert!(out.join("truth").read_dir().unwrap().count() > 0);

    let o = chcda(dir.path(), &["sweep-omega"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.csv", "error.svg", "energy.svg", "omega10_cells4.csv", "omega400_cells4.csv"] {
        assert!(out.join("sweep_omega").join(f).exists(), "missing {f}");
    }
    assert!(stdout(&o).contains("omega400_cells4"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = chcda(dir.path(), &["assimilate", "--omega", "50", "--h", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = fs::read_to_string(dir.path().join("out").join("manifest.conf")).unwrap();
    assert!(written.contains("omega = 50"), "{written}");
    assert!(dir.path().join("out").join("assimilate").join("omega50_cells2.csv").exists());
}

#[test]
fn report_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = chcda(dir.path(), &["report"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("out").join("report.txt").exists());
}

#[test]
fn bad_manifests_exit_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = chcda(dir.path(), &["truth", "--n", "zero"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    fs::write(dir.path().join("tiny.conf"), "n = 4\nbogus = 1\n").unwrap();
    let o = chcda(dir.path(), &["truth"]);
    assert_eq!(o.status.code(), Some(1));
}
