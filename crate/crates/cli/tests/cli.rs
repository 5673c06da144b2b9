use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ladder(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ladder"));
    cmd.args(args).env_remove("LADDER_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.conf")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = ladder(&["selftest", "--out", dir.path().to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("selftest.json")).unwrap()).unwrap();
    assert_eq!(v["kind"], "selftest");
    assert_eq!(v["checks"].as_array().unwrap().len(), 8);
}

#[test]
fn einstein_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let o = ladder(
        &[
            "einstein",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("einstein.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kind"], "einstein");
    assert_eq!(v["provenance"]["seed"], 7);
    assert!(v["provenance"]["tool_version"]
        .as_str()
        .unwrap()
        .starts_with(env!("CARGO_PKG_VERSION")));
    for key in [
        "consecutive_ok",
        "monotone_trend",
        "smallest_overlaps_sigma",
        "bounded",
        "passed",
    ] {
        assert!(v["verdict"][key].is_boolean(), "verdict.{key}");
    }
    let rows = v["per_lambda"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r["ratio"]["value"].is_number() && r["ratio"]["se"].is_number());
    }
    let csv = std::fs::read_to_string(dir.path().join("einstein.csv")).unwrap();
    assert!(csv.starts_with("# schema_version: 1\n"));
    assert!(csv.lines().any(|l| l == "lambda,estimator,value,se"));
}

#[test]
fn csv_does_not_depend_on_workers() {
    let cfg = small_config();
    let run = |extra: &[&str], envs: &[(&str, &str)]| {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec![
            "einstein",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = ladder(&args, envs);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(dir.path().join("einstein.csv")).unwrap(),
            std::fs::read(dir.path().join("einstein.json")).unwrap(),
        )
    };
    let one = run(&["--threads", "1"], &[]);
    let three = run(&["--threads", "3"], &[]);
    let env = run(&["--threads", "1"], &[("LADDER_THREADS", "4")]);
    assert_eq!(one, three);
    assert_eq!(one, env);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let o = ladder(
        &[
            "kappa",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "99",
            "--p",
            "0.6",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("kappa.csv")).unwrap();
    assert!(csv.contains("# seed: 99\n"));
    assert!(csv.contains("# config: p = 0.6\n"));
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "p = 0.5\n\nreplicas = lots\n").unwrap();
    let o = ladder(&["kappa", "--config", path.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn sample_env_writes_parseable_windows() {
    let dir = tempfile::tempdir().unwrap();
    let o = ladder(
        &[
            "sample-env",
            "--config",
            small_config().to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sample-env-windows/env-0003.txt")).unwrap();
    assert!(text.starts_with("# schema_version: 1\n"));
    let w = ladder_core::percolation::WindowConfig::from_text(&text).unwrap();
    assert_eq!((w.x_min(), w.x_max()), (-200, 200));
}
