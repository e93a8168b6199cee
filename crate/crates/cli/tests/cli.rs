use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fracmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracmpc")).args(args).output().expect("spawn fracmpc")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn check_model_reports_feasible_observer() {
    let out = fracmpc(&["check-model"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("observability rank        27 of 52"), "{text}");
    assert!(text.contains("augmented rank            53 of 53"));
}

#[test]
fn run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = fracmpc(&["run", "--out", &out_arg(dir.path())]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let name = "amiodarone-nominal.csv";
    let csv = fs::read(a.path().join(name)).unwrap();
    assert_eq!(csv, fs::read(b.path().join(name)).unwrap());
    assert!(csv.starts_with(b"t,r,y,u,A1,A2,dhat\n"));
    assert!(a.path().join("manifest.json").exists());
}

#[test]
fn invalid_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nstep = -1.0\n").unwrap();
    let out = fracmpc(&["run", "--config", path.to_str().unwrap(), "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8(out.stderr).unwrap().is_empty());

    let out = fracmpc(&["run", "--preset", "no-such-preset", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shown_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracmpc(&["show-config"]);
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("scenario.toml");
    fs::write(&path, &out.stdout).unwrap();
    let again = fracmpc(&["show-config", "--config", path.to_str().unwrap()]);
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn bode_data_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracmpc(&["oustaloup-bode", "--points", "50", "--out", &out_arg(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("oustaloup_bode.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[0], "omega,magnitude,phase_deg,ideal_magnitude,ideal_phase_deg");
}
