use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

fn degma(args: &[&str], threads: &str) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_degma"))
        .args(args)
        .env("DEGMA_THREADS", threads)
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(degma(&["frobnicate"], "1").status.code(), Some(1));
    assert_eq!(degma(&["solve", "--n", "lots"], "1").status.code(), Some(1));
    assert_eq!(degma(&["--help"], "1").status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let o = degma(&["radial", "--p", "2.5", "--out", out], "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`p`"));
}

#[test]
fn config_files_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "schema = \"degma.run/1\"\n[solver]\nn = 65\ncolour = 3\n").unwrap();
    let o = degma(&["solve", "--config", cfg.to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn radial_writes_hashed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("radial");
    let o = degma(&["radial", "--p", "1", "--rho", "1", "--R", "2", "--out", out.to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!((summary["A"].as_f64().unwrap() - 1.0 / 18.0).abs() < 1e-9);
    assert!((summary["gprime"].as_f64().unwrap() - 0.5f64.cbrt()).abs() < 1e-6);
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 0);
    let files = m["files"].as_array().unwrap();
    assert!(files.iter().all(|f| f["path"] != "manifest.json"));
    for f in files {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
}

#[test]
fn unconverged_solve_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    let o = degma(&["solve", "--n", "65", "--max-sweeps", "2", "--out", out.to_str().unwrap()], "1");
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(manifest(&out)["exit_code"], 2);
}

#[test]
fn output_does_not_depend_on_threads_or_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = degma(&["diagnose", "--n", "129", "--seed", "3", "--out", out.to_str().unwrap()], threads);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
    assert!(a.join("classification.json").exists());
    assert!(a.join("patches/patch_0.csv").exists());
}
