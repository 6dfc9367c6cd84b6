use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tabpower(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabpower"))
        .args(args)
        .env_remove("TABPOWER_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json_in(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn power_spot_value() {
    let csv = stdout(&tabpower(&[
        "power",
        "--setting",
        "2",
        "--epsilon",
        "1/20",
        "--n",
        "100",
        "--test",
        "dcov-mle",
    ]));
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "theoretical").unwrap();
    let p: f64 = row[col].parse().unwrap();
    assert!((p - 0.748).abs() < 0.015, "{p}");
}

#[test]
fn null_hypothesis_power_is_a_usage_error() {
    let out = tabpower(&["power", "--setting", "1", "--epsilon", "0", "--n", "100"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let cases: [&[&str]; 4] = [
        &[
            "simulate",
            "--setting",
            "1",
            "--epsilon",
            "1/100",
            "--n",
            "100",
            "--replications",
            "0",
        ],
        &["power", "--setting", "1", "--epsilon", "1/36", "--n", "100"],
        &[
            "power",
            "--setting",
            "1",
            "--epsilon",
            "1/100",
            "--n",
            "100",
            "--alpha",
            "1.5",
        ],
        &["power", "--setting", "1", "--epsilon", "1/100"],
    ];
    for args in cases {
        assert_eq!(tabpower(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn null_law_rejects_dependent_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dep.csv");
    std::fs::write(&path, "0.3,0.2\n0.2,0.3\n").unwrap();
    let out = tabpower(&["null-law", "--table", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn null_law_weights() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("uniform.csv");
    std::fs::write(&path, "0.25,0.25\n0.25,0.25\n").unwrap();
    let out = dir.path().join("out");
    stdout(&tabpower(&[
        "null-law",
        "--table",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let body = json_in(&out, "null_law.json");
    let w = body["dcov_weights"].as_array().unwrap();
    assert_eq!(w.len(), 1);
    assert!((w[0].as_f64().unwrap() - 0.25).abs() < 1e-8);
    assert_eq!(body["pearson_df"], 1);

    stdout(&tabpower(&[
        "null-law",
        "--setting",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]));
    let body = json_in(&out, "null_law.json");
    assert_eq!(body["dcov_weights"].as_array().unwrap().len(), 25);
    assert!((body["lemma1_constant"].as_f64().unwrap() - 25.0 / 36.0).abs() < 1e-12);
    let q = body["critical_values_n_scale"]["pearson"].as_f64().unwrap();
    assert!((q - 37.652).abs() < 1e-3, "{q}");
}

#[test]
fn simulate_is_deterministic_across_runs_and_workers() {
    let base = [
        "simulate",
        "--setting",
        "2",
        "--epsilon",
        "1/20",
        "--n",
        "100",
        "--replications",
        "3000",
        "--seed",
        "42",
    ];
    let one = stdout(&tabpower(&[&base[..], &["--workers", "1"]].concat()));
    let again = stdout(&tabpower(&[&base[..], &["--workers", "1"]].concat()));
    let eight = stdout(&tabpower(&[&base[..], &["--workers", "8"]].concat()));
    assert_eq!(one, again);
    assert_eq!(one, eight);
    let other = stdout(&tabpower(&[
        "simulate",
        "--setting",
        "2",
        "--epsilon",
        "1/20",
        "--n",
        "100",
        "--replications",
        "3000",
        "--seed",
        "43",
    ]));
    assert_ne!(one, other);
}

#[test]
fn seed_falls_back_to_environment() {
    let args = [
        "simulate",
        "--setting",
        "2",
        "--epsilon",
        "1/20",
        "--n",
        "100",
        "--replications",
        "500",
    ];
    let flag = stdout(&tabpower(&[&args[..], &["--seed", "77"]].concat()));
    let env = Command::new(env!("CARGO_BIN_EXE_tabpower"))
        .args(args)
        .env("TABPOWER_SEED", "77")
        .output()
        .unwrap();
    assert_eq!(flag, stdout(&env));
}

#[test]
fn rerun_reproduces_an_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    stdout(&tabpower(&[
        "simulate",
        "--setting",
        "1",
        "--epsilon",
        "1/80",
        "--n",
        "150",
        "--replications",
        "800",
        "--seed",
        "5",
        "--format",
        "json",
        "--out",
        first.to_str().unwrap(),
    ]));
    let artifact = first.join("simulate.json");
    stdout(&tabpower(&[
        "rerun",
        artifact.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--workers",
        "3",
    ]));
    assert_eq!(
        std::fs::read(&artifact).unwrap(),
        std::fs::read(second.join("simulate.json")).unwrap()
    );
}

#[test]
fn dump_internals_writes_the_law() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&tabpower(&[
        "power",
        "--setting",
        "2",
        "--epsilon",
        "1/15",
        "--n",
        "200",
        "--test",
        "dcov-unbiased",
        "--dump-internals",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let body = json_in(dir.path(), "internals.json");
    let entry = &body["internals"][0];
    assert!(entry["shift"].as_f64().unwrap() < 0.0);
    assert!(entry["sigma"].as_f64().unwrap() > 0.0);
    assert_eq!(entry["gradient"].as_array().unwrap().len(), 16);
}

#[test]
fn reproduce_table_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&tabpower(&[
        "reproduce",
        "table2",
        "--n",
        "100",
        "--replications",
        "300",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let manifest = json_in(dir.path(), "manifest.json");
    assert_eq!(manifest["target"], "table2");
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    assert_eq!(files, ["table2.csv", "table2_rows.json"]);
    let csv = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
}
