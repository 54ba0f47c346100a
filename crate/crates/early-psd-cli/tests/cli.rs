//! End-to-end checks of the binary: exit codes, diagnostics, file output.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_early-psd"))
}

fn config_path(name: &str) -> String {
    format!("{}/../../configs/{name}.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn runs_a_small_sweep_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "eps-sweep",
            "--config",
            &config_path("eps_sweep"),
            "--out",
            dir.path().to_str().unwrap(),
            "--realizations",
            "8",
            "--threads",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eps-sweep.csv")).unwrap();
    assert!(csv.starts_with("experiment,eps_h_db,alpha,freq_hz,"));
    assert!(csv.contains("eps_phis_sqrt_db"));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = bin()
        .args(["eps-sweep", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}

#[test]
fn subcommand_must_match_config_kind() {
    let out = bin()
        .args(["alpha-sweep", "--config", &config_path("eps_sweep")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eps-sweep") && err.contains("alpha-sweep"), "got: {err}");
}

#[test]
fn rejects_declared_but_missing_acoustic_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
experiment = "acoustic"
seed = 1

[acoustic]
source_doas_deg = [-30.0, 60.0]
source_files = ["/nonexistent/a.wav", "/nonexistent/b.wav"]
"#;
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, cfg).unwrap();
    let out = bin()
        .args(["acoustic", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, "experiment = \"eps-sweep\"\nseed = 1\nrealisations = 4\n").unwrap();
    let out = bin()
        .args(["eps-sweep", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}
