use std::path::Path;
use std::process::{Command, Output};

fn saa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saa-lab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn vc_bound_prints_the_table() {
    let o = saa(&["vc-bound", "--m", "2", "--t", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let arith = out.lines().find(|l| l.starts_with("arithmetic")).unwrap();
    assert!(arith.contains("40.000000"), "{arith}");
    assert!(out.contains("exponential_q"));
    assert!(!out.contains("pfaffian"));
}

#[test]
fn vc_bound_rejects_empty_program() {
    let o = saa(&["vc-bound", "--m", "0", "--t", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn transfer_check_passes_on_consistent_tables() {
    let o = saa(&["transfer-check", "--f", "0,1,2,1", "--f-hat", "0.1,0.9,2,1.2", "--delta", "0.05", "--kappa", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("distance localization"));
    let random = saa(&["transfer-check", "--size", "200", "--seed", "9", "--epsilon", "0.05"]);
    assert_eq!(random.status.code(), Some(0), "{}", stderr(&random));
}

#[test]
fn transfer_check_fails_for_a_non_member() {
    // Index 2 is far outside the empirical delta-minimizer set.
    let o = saa(&["transfer-check", "--f", "0,1,2", "--f-hat", "0,1,2", "--x-hat", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("check failed"));
}

#[test]
fn transfer_check_rejects_mismatched_tables() {
    let o = saa(&["transfer-check", "--f", "0,1,2", "--f-hat", "0,1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = saa(&["rates", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn bad_kappa_is_reported_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"kind": "rates", "seed": 1, "kappa": 0.5,
            "model": {"family": "quad_synthetic", "dim": 1},
            "distribution": {"support": [[-1.0], [1.0]]},
            "grid": {"lower": [-1.0], "upper": [1.0], "resolution": [5]}}"#,
    );
    let o = saa(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("kappa: sharp-growth order must satisfy kappa >= 1"), "{}", stderr(&o));
}

#[test]
fn run_writes_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"kind": "transfer", "seed": 4, "ns": [8, 32], "reps": 3, "delta_c": 0.5,
            "model": {"family": "quad_synthetic", "dim": 1},
            "distribution": {"support": [[-1.0], [0.0], [1.0]]},
            "grid": {"lower": [-1.0], "upper": [1.0], "resolution": [11]}}"#,
    );
    let o = saa(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let runs: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    for name in ["results.csv", "summary.json", "config.resolved.json"] {
        assert!(runs[0].join(name).exists(), "{name}");
    }
    let csv = std::fs::read_to_string(runs[0].join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn seed_override_changes_the_run_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let a = saa(&["rates", "--seed", "1", "--reps", "3", "--out", out]);
    let b = saa(&["rates", "--seed", "2", "--reps", "3", "--out", out]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let hash = |o: &Output| stdout(o).split_whitespace().nth(1).unwrap().to_string();
    assert_ne!(hash(&a), hash(&b));
    assert!(stdout(&a).contains("distance"));
}
