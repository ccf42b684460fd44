use std::path::Path;
use std::process::Command;

fn sparsedom(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sparsedom"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn selftest_with_empty_config_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out = sparsedom(&["selftest", "--config", cfg.to_str().unwrap(), "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("r/selftest.csv")).unwrap();
    assert!(csv.starts_with("module,invariant,n,status,witness\n"));
    assert!(!csv.contains(",fail,"));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"signal": {"n": 1000}}"#).unwrap();
    let out = sparsedom(&["kappa", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = sparsedom(&["kappa", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_format_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = sparsedom(&["kappa", "--format", "xml", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("csv") && err.contains("json") && err.contains("both"), "{err}");
}

#[test]
fn fixed_threshold_too_small_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dom.json");
    std::fs::write(
        &cfg,
        r#"{"signal": {"n": 256, "support": {"left": "1/2", "length": "1/2"}},
            "operator": {"max_frequency": 4},
            "params": {"threshold": 0.01, "trials": 1}}"#,
    )
    .unwrap();
    let out = sparsedom(&["dominate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn decay_report_schema_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("decay.json");
    std::fs::write(
        &cfg,
        r#"{"signal": {"n": 2048, "support": {"left": "1/4", "length": "1/2"}, "max_frequency": 32},
            "params": {"trials": 2}}"#,
    )
    .unwrap();
    for (seed, out_dir) in [("5", "a"), ("5", "b"), ("6", "c")] {
        let out = sparsedom(
            &["decay", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out_dir],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    let csv = String::from_utf8(read("a", "decay.csv")).unwrap();
    assert!(csv.starts_with("t,fraction\n"));
    let json: serde_json::Value = serde_json::from_slice(&read("a", "decay.json")).unwrap();
    for key in ["alpha_hat", "c_hat", "r_squared", "skipped", "trials", "seed", "version", "config"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["seed"], 5);
    assert_eq!(read("a", "decay.json"), read("b", "decay.json"));
    assert_ne!(read("a", "decay.json"), read("c", "decay.json"));
}
