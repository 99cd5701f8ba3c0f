//! End-to-end runs of the `isd` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn isd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = isd(args);
    assert!(
        out.status.success(),
        "isd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Data rows of a CSV written by the binary (comment and header lines skipped).
fn data_rows(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let files = ["data.csv", "history.csv", "test.csv", "truth.json"];
    let run = || {
        ok(&["simulate", "--n", "600", "--seed", "1", "--schedule", "zero_shot", "--out", path(&a)]);
        files.map(|f| std::fs::read(a.join(f)).unwrap())
    };
    assert_eq!(run(), run());
    assert_eq!(data_rows(&a.join("data.csv")).len(), 850);
    assert_eq!(data_rows(&a.join("history.csv")).len(), 600);
    let head = std::fs::read_to_string(a.join("data.csv")).unwrap();
    assert!(head.starts_with("# {") && head.contains("\"version\""));
}

#[test]
fn example2d_truth_has_known_invariant_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--generator", "example2d", "--n", "1000", "--out", path(dir.path())]);
    let truth = json(&dir.path().join("truth.json"));
    let beta: Vec<f64> = serde_json::from_value(truth["truth"]["beta_inv_true"].clone()).unwrap();
    assert!((beta[0] - 1.0).abs() < 1e-12 && (beta[1] - 3f64.sqrt()).abs() < 1e-12);
    assert!(truth["run_config"]["generator"] == "example2d");
}

#[test]
fn fit_lambda_extremes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--n", "2000", "--seed", "2", "--out", path(d)]);
    let data = d.join("history.csv");
    ok(&["fit", "--data", path(&data), "--lambda", "1", "--out", path(&d.join("all.json"))]);
    let m = json(&d.join("all.json"));
    assert_eq!(m["model"]["split"]["dims"][0], 10);
    assert_eq!(m["mode"], "estimated");
    assert!(m["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(m["run_config"]["estimation"]["lambda"], 1.0);
    assert!(m["diagnostics"]["block_dims"].as_array().is_some());

    ok(&["fit", "--data", path(&data), "--lambda", "0", "--out", path(&d.join("none.json"))]);
    let m = json(&d.join("none.json"));
    let dim_inv = m["model"]["split"]["dims"][0].as_u64().unwrap();
    assert!(dim_inv < 10);

    ok(&["fit", "--data", path(&data), "--cv", "--folds", "5", "--out", path(&d.join("cv.json"))]);
    let m = json(&d.join("cv.json"));
    assert!(m["diagnostics"]["cv"]["grid"].as_array().unwrap().len() >= 2);
}

#[test]
fn adapt_emits_one_row_per_step_and_handles_small_windows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--n", "1500", "--seed", "3", "--schedule", "zero_shot", "--out", path(d)]);
    let truth = d.join("truth.json");
    let model = d.join("model.json");
    ok(&["fit", "--data", path(&d.join("history.csv")), "--oracle-split", path(&truth), "--out", path(&model)]);
    assert_eq!(json(&model)["mode"], "oracle_split");

    let pred = d.join("pred.csv");
    ok(&["adapt", "--model", path(&model), "--data", path(&d.join("test.csv")), "--m", "30", "--out", path(&pred)]);
    let rows = data_rows(&pred);
    assert_eq!(rows.len(), 250 - 30);
    assert!(rows.iter().all(|r| r[8] == "ok"));

    // dim_res = 3 < m = 7 < p = 10: ISD runs, OLS cannot
    let small = d.join("small.csv");
    ok(&["adapt", "--model", path(&model), "--data", path(&d.join("test.csv")), "--m", "7", "--out", path(&small)]);
    let rows = data_rows(&small);
    assert_eq!(rows.len(), 250 - 7);
    assert!(rows.iter().all(|r| r[8] == "underdetermined" && r[3].is_empty() && !r[2].is_empty()));

    let out = isd(&["adapt", "--model", path(&model), "--data", path(&d.join("test.csv")), "--m", "3", "--out", path(&small)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn isd_beats_rolling_ols_on_cumulative_explained_variance() {
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let seeds = 5;
    for seed in 0..seeds {
        let d = dir.path().join(format!("s{seed}"));
        let s = seed.to_string();
        ok(&["simulate", "--n", "3000", "--seed", &s, "--schedule", "three_levels", "--out", path(&d)]);
        let model = d.join("model.json");
        ok(&[
            "fit", "--data", path(&d.join("history.csv")),
            "--oracle-beta", path(&d.join("truth.json")),
            "--out", path(&model),
        ]);
        let pred = d.join("pred.csv");
        ok(&["adapt", "--model", path(&model), "--data", path(&d.join("test.csv")), "--m", "30", "--out", path(&pred)]);
        let rows = data_rows(&pred);
        let last = rows.last().unwrap();
        let (isd, ols): (f64, f64) = (last[5].parse().unwrap(), last[6].parse().unwrap());
        if isd >= ols {
            wins += 1;
        }
    }
    assert!(2 * wins > seeds, "ISD ahead in {wins}/{seeds} seeds");
}

#[test]
fn benchmark_writes_tidy_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["benchmark", "--ns", "500,800", "--seeds", "0..2", "--lambda", "0.2", "--out", path(d)]);
    // per cell: beta error, dim_inv, and two R² values for each of four estimators
    assert_eq!(data_rows(&d.join("tidy.csv")).len(), 2 * 2 * 10);
    let s = json(&d.join("summary.json"));
    assert!(s["cells_failed"].as_array().unwrap().is_empty());
    assert!(!s["summary"].as_array().unwrap().is_empty());

    let a = d.join("adapt");
    ok(&[
        "benchmark", "--experiment", "adaptation", "--n", "1000", "--ms", "15,30",
        "--seeds", "1", "--oracle-split", "--out", path(&a),
    ]);
    let rows = data_rows(&a.join("tidy.csv"));
    assert_eq!(rows.len(), 2 * 2);
    assert!(rows.iter().all(|r| r[4] == "mspe"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = isd(&["benchmark", "--seeds", "", "--out", path(d)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty sweep"));

    let out = isd(&["fit", "--data", path(&d.join("missing.csv")), "--out", path(&d.join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = isd(&["simulate", "--n", "10", "--out", path(d)]);
    assert_eq!(out.status.code(), Some(2));

    let out = isd(&["fit", "--data", "x.csv", "--out", "y.json", "--lambda", "0.1", "--cv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    // the second covariate never moves, so every window's Gram matrix is singular
    let mut text = String::from("a,b,y\n");
    for t in 0..400 {
        let a = ((t * 37) % 101) as f64 / 50.0 - 1.0;
        text.push_str(&format!("{a},1,{}\n", 2.0 * a));
    }
    std::fs::write(&csv, text).unwrap();
    let out = isd(&["fit", "--data", path(&csv), "--lambda", "0.5", "--out", path(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
