use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bhmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bhmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn sample(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "sample",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "d=2",
        "--set",
        "replicates=1",
        "--set",
        "n_iter=10",
    ];
    args.extend_from_slice(extra);
    bhmc(&args)
}

#[test]
fn sample_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = sample(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "replicate,iter,x_1,x_2");
    assert!(lines[1].starts_with("0,1,"));

    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["command"], "sample");
    assert_eq!(meta["config"]["eta"], 5.0);
    assert_eq!(meta["config"]["x_init"], serde_json::json!([0.0, 0.0]));
    let stats = json(&dir.path().join("stats.json"));
    assert!(stats["summary"].is_null());
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let extra = ["--set", "replicates=3", "--seed", "11"];
    assert!(sample(a.path(), &extra).status.success());
    assert!(sample(b.path(), &extra).status.success());
    assert!(sample(c.path(), &["--set", "replicates=3", "--seed", "12"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("samples.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    assert_eq!(
        std::fs::read(a.path().join("stats.json")).unwrap(),
        std::fs::read(b.path().join("stats.json")).unwrap()
    );
}

#[test]
fn unchecked_ablation_omits_involution_rate() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(sample(a.path(), &[]).status.success());
    assert!(sample(b.path(), &["--set", "sampler=bhmc_no_involution"]).status.success());
    let sa = json(&a.path().join("stats.json"));
    let sb = json(&b.path().join("stats.json"));
    assert!(sa["replicates"][0].get("involution_rejection_rate").is_some());
    assert!(sb["replicates"][0].get("involution_rejection_rate").is_none());
    assert!(sb["replicates"][0].get("dom_failure_rate").is_some());
    let mb = json(&b.path().join("meta.json"));
    assert_eq!(mb["config"]["fixed_point"], "truncate");
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"polytope": "simplex", "d": 3, "n_iter": 50, "replicates": 2}"#).unwrap();
    let out = dir.path().join("out");
    let o = bhmc(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "n_iter=20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let meta = json(&out.join("meta.json"));
    assert_eq!(meta["config"]["eta"], 10.0);
    assert!(!json(&out.join("stats.json"))["summary"].is_null());
}

#[test]
fn polytope_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let poly = dir.path().join("tri.json");
    std::fs::write(
        &poly,
        r#"{"d": 2, "m": 3, "A": [[-1, 0], [0, -1], [1, 1]], "b": [0, 0, 1]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = bhmc(&[
        "sample",
        "--set",
        &format!("polytope={}", poly.display()),
        "--set",
        "n_iter=30",
        "--set",
        "replicates=1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out.join("meta.json"))["config"]["eta"], 10.0);
}

#[test]
fn bad_configs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        &["--set", "n_itr=5"][..],
        &["--set", "beta=1.5"],
        &["--set", "polytope=/no/such.json"],
        &["--set", "target=gaussian"],
        &["--set", "sampler=imh"],
        &["--set", "x_init=[2.0, 0.0]"],
    ] {
        let o = sample(dir.path(), extra);
        assert!(!o.status.success(), "{extra:?} should fail");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{extra:?}");
    }
}

#[test]
fn check_passes_and_catches_fault() {
    let dir = tempfile::tempdir().unwrap();
    let ok = bhmc(&["check", "--out", dir.path().to_str().unwrap()]);
    assert!(ok.status.success());
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("finite_difference") && stdout.contains("PASS"));
    assert!(dir.path().join("check.json").exists());

    let bad = bhmc(&["check", "--inject-fault", "trace-term-sign"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn small_bias_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhmc(&[
        "experiment",
        "hypercube_bias",
        "--d",
        "2",
        "--set",
        "n_iter=400",
        "--set",
        "replicates=2",
        "--set",
        "trace_every=100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let stats = json(&dir.path().join("stats.json"));
    assert_eq!(stats["config"]["d"], 2);
    assert_eq!(stats["reference_source"], "closed_form");
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,replicate,sampler,estimate"));
}

#[test]
fn small_norm_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let o = bhmc(&[
        "experiment",
        "norm_ablation",
        "--set",
        "n_iter=200",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 401);
    let stats = json(&dir.path().join("stats.json"));
    assert_eq!(stats["modes"].as_array().unwrap().len(), 2);
}
