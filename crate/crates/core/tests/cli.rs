use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(config: &Path, out: &Path, extra: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spectralfield"));
    cmd.arg("--config").arg(config).arg("--out").arg(out).args(extra);
    cmd.env_remove("SPECTRALFIELD_SEED");
    if let Some(s) = seed {
        cmd.env("SPECTRALFIELD_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SAMPLE: &str = r#"{
  "command": "sample",
  "model": { "spec": { "dim": 2, "family": "radial-power", "alpha": 0.5 } },
  "n": 32,
  "seed": 5,
  "count": 6,
  "kernel_radius": 2
}"#;

#[test]
fn csv_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sample.json", SAMPLE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&cfg, &a, &["--workers", "1"], None).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--workers", "4"], None).status.code(), Some(0));
    for f in ["sample.csv", "empirical_kernel.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn env_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sample.json", SAMPLE);
    let base = dir.path().join("base");
    let env1 = dir.path().join("env1");
    let env2 = dir.path().join("env2");
    assert_eq!(run(&cfg, &base, &[], None).status.code(), Some(0));
    assert_eq!(run(&cfg, &env1, &[], Some("99")).status.code(), Some(0));
    assert_eq!(run(&cfg, &env2, &[], Some("99")).status.code(), Some(0));
    let read = |p: &Path| fs::read(p.join("sample.csv")).unwrap();
    assert_eq!(read(&env1), read(&env2));
    assert_ne!(read(&base), read(&env1));
    let manifest = fs::read_to_string(env1.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 99"), "{manifest}");
    assert_eq!(run(&cfg, &env1, &[], Some("not-a-seed")).status.code(), Some(2));
}

#[test]
fn short_grid_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "scan.json",
        r#"{"command": "variance-scan", "model": {"spec": {"dim": 1, "family": "constant"}},
            "window": {"shape": "ball"}, "grid": [10, 100, 1000]}"#,
    );
    let out = run(&cfg, &dir.path().join("out"), &[], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn malformed_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"command": "sample""#,
        r#"{"command": "bogus"}"#,
        r#"{"command": "kernel", "model": {"spec": {"dim": 1, "family": "constant"}}, "radius": 2, "extra": 1}"#,
        r#"{"command": "kernel", "model": {"spec": {"dim": 1, "family": "stealthy-gap", "delta": -1}}, "radius": 2}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), body);
        assert_eq!(run(&cfg, &dir.path().join("out"), &[], None).status.code(), Some(2), "case {i}");
    }
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&missing, &dir.path().join("out"), &[], None).status.code(), Some(4));
}

#[test]
fn oversized_torus_is_a_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "big.json",
        r#"{"command": "sample", "model": {"spec": {"dim": 3, "family": "constant"}}, "n": 1024, "seed": 1}"#,
    );
    assert_eq!(run(&cfg, &dir.path().join("out"), &[], None).status.code(), Some(4));
}

#[test]
fn covariance_grid_has_nine_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid.json",
        r#"{"command": "covariance-grid",
            "model": {"spec": {"dim": 2, "family": "axes-stealthy", "delta": 1.5707963267948966}}, "L": 32}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run(&cfg, &out, &[], None).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("covariance_grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,value,predicted_limit,ratio");
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("0;0,"));
    assert!(fs::read_to_string(out.join("manifest.json")).unwrap().contains("covariance-grid"));
}

#[test]
fn unbounded_sigma_is_rejected_for_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid.json",
        r#"{"command": "covariance-grid", "model": {"spec": {"dim": 2, "family": "constant"}}, "L": 16}"#,
    );
    assert_eq!(run(&cfg, &dir.path().join("out"), &[], None).status.code(), Some(2));
}

#[test]
fn shipped_configs_run() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/configs");
    let dir = tempfile::tempdir().unwrap();
    for name in ["kernel.json", "tabulated-kernel.json", "covariance-grid.json", "clt.json"] {
        let out = dir.path().join(name);
        let o = run(&configs.join(name), &out, &[], None);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("manifest.json").exists());
    }
}
