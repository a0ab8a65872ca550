use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qutrit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qutrit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn spectrum_writes_a_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = qutrit(
        dir.path(),
        &["spectrum", "--omega01", "5623.1:5723.1:2", "--out", "run"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("run/spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("omega01_MHz,s0_MHz,s1_MHz,s2_MHz"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 5623.1);
    for (got, want) in row[1..].iter().zip([10.027, 6.698, 3.993]) {
        assert!((got - want).abs() < 5e-4, "{row:?}");
    }
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("run/spectrum.manifest.toml").exists());
}

#[test]
fn missing_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = qutrit(dir.path(), &["spectrum", "--config", "absent.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("qutrit: error: config:"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_config_key_names_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "seed = 3\n\n[readout]\ndt_ns = 1.0\nspeed = 2\n",
    )
    .unwrap();
    let o = qutrit(dir.path(), &["spectrum", "--config", "bad.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("bad.toml:5"), "{err}");
    assert!(err.contains("speed"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn bad_arguments_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = qutrit(dir.path(), &["spectrum", "--omega01", "1:2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qutrit(dir.path(), &["rabi", "--transition", "02"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_physics_is_reported_as_such() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "[device]\nkappa_MHz = -1.0\n").unwrap();
    let o = qutrit(dir.path(), &["spectrum", "--config", "cfg.toml", "--out", "run"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("qutrit: error: physics:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("kappa_MHz"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn tomo_prints_the_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), "[tomography.noise]\nbootstrap = 8\n").unwrap();
    let o = qutrit(
        dir.path(),
        &["tomo", "--config", "cfg.toml", "--out", "run", "--seed", "7"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let line = stdout
        .lines()
        .find(|l| l.starts_with("target=psi_a F="))
        .expect("fidelity line");
    let f: f64 = line["target=psi_a F=".len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.9..=1.0).contains(&f), "{line}");
    let rho = fs::read_to_string(dir.path().join("run/tomo_rho.csv")).unwrap();
    assert_eq!(rho.lines().count(), 4);
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = qutrit(
        dir.path(),
        &["spectrum", "--omega01", "5000:5600:4", "--seed", "9", "--out", "run"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let first = fs::read(dir.path().join("run/spectrum.csv")).unwrap();
    let manifest = fs::read(dir.path().join("run/spectrum.manifest.toml")).unwrap();
    fs::copy(
        dir.path().join("run/spectrum.manifest.toml"),
        dir.path().join("again.toml"),
    )
    .unwrap();
    fs::remove_dir_all(dir.path().join("run")).unwrap();
    let o = qutrit(dir.path(), &["spectrum", "--config", "again.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("run/spectrum.csv")).unwrap(), first);
    assert_eq!(
        fs::read(dir.path().join("run/spectrum.manifest.toml")).unwrap(),
        manifest
    );
}
