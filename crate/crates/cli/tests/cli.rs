use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BINARY: &str = r#"{"alphabet": ["x"], "matrix": [[2]], "v_per": [0.0], "root_label": "x",
 "disorder": {"mode": "iid_both", "per_label": [{"law": "uniform", "params": {"w": 0.9}}]}}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conespectra"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in files {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    dir
}

fn json_out(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn validate_exit_codes() {
    let dir = setup(&[
        ("ok.json", BINARY),
        ("one.json", r#"{"alphabet": ["x"], "matrix": [[1]], "v_per": [0], "root_label": "x"}"#),
        ("bad.json", "{\n  \"alphabet\": [\"x\"],\n  \"matrix\": [[2]]\n  \"v_per\": [0]\n}"),
    ]);
    let ok = run(dir.path(), &["validate", "ok.json"]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json_out(&ok)["admissible"], Value::Bool(true));
    assert!(json_out(&ok)["manifest"]["digest"].as_str().unwrap().len() == 64);

    let one = run(dir.path(), &["validate", "one.json"]);
    assert_eq!(one.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&one.stderr).contains("(M0) violated"));

    let bad = run(dir.path(), &["validate", "bad.json"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 4 column 3"));

    let missing = run(dir.path(), &["validate", "nope.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    let dir = setup(&[("ok.json", BINARY)]);
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["solve", "ok.json", "--energy", "x"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_conespectra"))
        .current_dir(dir.path())
        .env("CONESPECTRA_THREADS", "zero")
        .args(["validate", "ok.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bands_report_and_scan_csv() {
    let dir = setup(&[("ok.json", BINARY)]);
    let o = run(dir.path(), &["bands", "ok.json", "--csv", "scan.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let v = json_out(&o);
    let iv = v["bands"]["intervals"].as_array().unwrap();
    assert_eq!(iv.len(), 1);
    let hi = iv[0][1].as_f64().unwrap();
    assert!((hi - 2.0 * 2f64.sqrt()).abs() < 1e-2);
    let csv = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
    let digest = v["manifest"]["digest"].as_str().unwrap();
    assert_eq!(csv.lines().next().unwrap(), format!("# manifest_digest: {digest}"));
    assert_eq!(csv.lines().nth(1).unwrap(), "E,im_gamma_x");
    assert!(v["manifest"]["outputs"]["scan.csv"].is_string());
}

#[test]
fn solve_matches_quadratic_root() {
    let dir = setup(&[("ok.json", BINARY)]);
    let o = run(dir.path(), &["solve", "ok.json", "--energy", "-1,0.5", "--eta", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = json_out(&o)["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    // 2Γ² + zΓ + 1 = 0 with z = −1 + 0.1i.
    let g = &rows[0]["gamma"][0];
    let (re, im) = (g[0].as_f64().unwrap(), g[1].as_f64().unwrap());
    let (zr, zi) = (-1.0, 0.1);
    let res_re = 2.0 * (re * re - im * im) + (zr * re - zi * im) + 1.0;
    let res_im = 4.0 * re * im + (zr * im + zi * re);
    assert!(res_re.abs() < 1e-10 && res_im.abs() < 1e-10 && im > 0.0);
}

#[test]
fn simulate_zero_coupling_and_sweep() {
    let dir = setup(&[("ok.json", BINARY)]);
    let o = run(
        dir.path(),
        &["simulate", "--model", "ok.json", "--lambda", "0", "--eta", "0.05", "--trials", "20"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_out(&o);
    assert_eq!(v["moment_vector"][0].as_f64().unwrap(), 0.0);
    assert_eq!(v["euclidean_moment"]["mean"].as_f64().unwrap(), 0.0);
    assert!(v["runtime"].is_number());

    let o = run(
        dir.path(),
        &[
            "simulate", "--model", "ok.json", "--lambda", "0.1,0.05", "--eta", "1,0.3,0.1", "--trials", "20",
            "--csv", "sweep.csv", "--out", "sweep.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 6);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 6);
    assert!(v.get("moment_vector").is_none());
}

#[test]
fn simulate_needs_disorder() {
    let dir = setup(&[("plain.json", r#"{"alphabet": ["x"], "matrix": [[2]], "v_per": [0], "root_label": "x"}"#)]);
    let o = run(dir.path(), &["simulate", "--model", "plain.json", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(
        dir.path(),
        &[
            "simulate", "--model", "plain.json", "--trials", "5", "--eta", "1", "--disorder", "iid_potential",
            "--law", "two_point:0.5",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(
        dir.path(),
        &["simulate", "--model", "plain.json", "--disorder", "iid_both", "--law", "uniform:1.5"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_interval_at_band_edge_fails() {
    let dir = setup(&[("ok.json", BINARY)]);
    let o = run(
        dir.path(),
        &["verify", "ok.json", "--interval", "0,2.83", "--samples", "10", "--kappa-samples", "10"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not inside a band"));
}

#[test]
fn verify_small_run_reports_suites() {
    let dir = setup(&[("ok.json", BINARY)]);
    let o = run(
        dir.path(),
        &[
            "verify", "ok.json", "--samples", "2000", "--kappa-samples", "300", "--grid-energies", "9",
            "--reports", "2",
        ],
    );
    let v = json_out(&o);
    let suites = v["report"]["suites"].as_array().unwrap();
    let eps_one = suites.iter().find(|s| s["name"] == "visibility_eps_one_empty").unwrap();
    assert_eq!(eps_one["counterexamples"], 0);
    assert_eq!(v["report"]["sample_reports"].as_array().unwrap().len(), 2);
    assert!(v["report"]["outside_ball"]["margin"].as_f64().unwrap() > 0.0);
    let code = if v["passed"] == Value::Bool(true) { 0 } else { 1 };
    assert_eq!(o.status.code(), Some(code));
}
