use std::path::{Path, PathBuf};
use std::process::Command;

use srcinv_harness::config::{builtin, ExperimentConfig, EXPERIMENTS};

fn srcinv(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_srcinv")).args(args).output().expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_match_the_builtins() {
    for name in EXPERIMENTS {
        let shipped = ExperimentConfig::load(&configs_dir().join(format!("{name}.toml"))).unwrap();
        shipped.validate().unwrap();
        assert_eq!(shipped, builtin(name).unwrap(), "{name}");
    }
}

#[test]
fn bundles_are_reproducible_apart_from_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = srcinv(&["run", "--experiment", "jacobian-check", "--out", dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "checks.csv") && names.iter().any(|n| n == "config.toml"));
    for name in names.iter().filter(|n| *n != "manifest.toml") {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name:?}");
    }

    let report = srcinv(&["report", a.to_str().unwrap()]);
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("[PASS] criterion  5"));
}

#[test]
fn run_from_a_config_file_reports_failed_checks_with_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("ode1d-flatness.toml");
    let out = srcinv(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] criterion  6"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let out = srcinv(&["run", "--experiment", "no-such-experiment"]);
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(configs_dir().join("example1.toml")).unwrap();
    std::fs::write(&path, text.replace("nx = 51", "nx = 1")).unwrap();
    let out = srcinv(&["run", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh"));
}
