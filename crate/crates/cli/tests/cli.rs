use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn txsel(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txsel"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

/// Asserts the object's keys, in the order they appear in the raw text.
fn assert_keys(raw: &[u8], v: &Value, expected: &[&str]) {
    let text = String::from_utf8_lossy(raw);
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_by_key(|k| text.find(&format!("\"{k}\"")).unwrap());
    assert_eq!(keys, expected);
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

fn two_pool() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("two.json"), "[4, 1]").unwrap();
    dir
}

#[test]
fn solve_cfs_two_transactions() {
    let dir = two_pool();
    let out = txsel(
        &[
            "solve", "--model", "cfs", "--pool", "two.json", "--n", "2", "--b", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let q = floats(&v["q"]);
    assert!(
        (q[0] - 0.8).abs() < 1e-6 && (q[1] - 0.2).abs() < 1e-6,
        "{q:?}"
    );
    assert_eq!(v["model"], "cfs");
    assert_eq!(v["n"], 2);
    assert_eq!(v["b"], 1);
    assert_keys(&out.stdout, &v, &["model", "n", "b", "q", "diagnostics"]);
    assert_keys(
        &out.stdout,
        &v["diagnostics"],
        &["iterations", "kkt_residual", "converged", "ne_gap"],
    );
    assert_eq!(v["diagnostics"]["converged"], true);
}

#[test]
fn solve_rts_at_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "solve",
            "--model",
            "rts",
            "--zipf",
            "10,0,1000,42",
            "--n",
            "10",
            "--b",
            "100",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let q = floats(&json(&out)["q"]);
    assert_eq!(q.len(), 1000);
    assert!(q.iter().all(|&x| x == 0.1));
}

#[test]
fn solve_writes_to_out_file() {
    let dir = two_pool();
    let out = txsel(
        &[
            "solve", "--model", "rfa", "--pool", "two.json", "--n", "2", "--b", "1", "--out",
            "q.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("q.json")).unwrap()).unwrap();
    assert_eq!(floats(&v["q"]), vec![1.0, 0.0]);
}

#[test]
fn missing_model_is_a_usage_error() {
    let dir = two_pool();
    let out = txsel(&["solve", "--pool", "two.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_flags_exit_2() {
    let dir = two_pool();
    // b larger than the pool
    let out = txsel(
        &[
            "solve", "--model", "rts", "--pool", "two.json", "--n", "2", "--b", "3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = txsel(
        &["solve", "--model", "rts", "--zipf", "10,0,1000"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = txsel(&["sweep", "--vary", "q", "--standard-grid"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3_with_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "solve",
            "--model",
            "cfs",
            "--zipf",
            "10,0,500,1",
            "--n",
            "10",
            "--b",
            "50",
            "--max-iters",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let v = json(&out);
    assert_eq!(v["diagnostics"]["converged"], false);
    assert_eq!(floats(&v["q"]).len(), 500);
}

#[test]
fn io_errors_exit_4() {
    let dir = two_pool();
    let out = txsel(
        &[
            "solve",
            "--model",
            "rts",
            "--pool",
            "missing.json",
            "--n",
            "2",
            "--b",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    std::fs::write(dir.path().join("bad.json"), "{\"q\": [1, ").unwrap();
    let out = txsel(
        &[
            "metrics",
            "--strategy",
            "bad.json",
            "--pool",
            "two.json",
            "--n",
            "2",
            "--b",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    let out = txsel(
        &[
            "solve",
            "--model",
            "rts",
            "--pool",
            "two.json",
            "--n",
            "2",
            "--b",
            "1",
            "--out",
            "no/such/dir/q.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn metrics_of_a_pure_strategy() {
    let dir = two_pool();
    std::fs::write(dir.path().join("q.json"), "[1, 0]").unwrap();
    let out = txsel(
        &[
            "metrics",
            "--strategy",
            "q.json",
            "--pool",
            "two.json",
            "--n",
            "2",
            "--b",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["theta_fee"].as_f64().unwrap(), 4.0);
    assert_eq!(v["theta_tx"].as_f64().unwrap(), 1.0);
    assert_eq!(v["per_validator_payoff"].as_f64().unwrap(), 2.0);
    assert_keys(
        &out.stdout,
        &v,
        &["theta_tx", "theta_fee", "per_validator_payoff", "ne_gap"],
    );
}

#[test]
fn metrics_of_rts_at_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &["solve", "--model", "rts", "--out", "rts.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let out = txsel(&["metrics", "--strategy", "rts.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let theta_tx = json(&out)["theta_tx"].as_f64().unwrap();
    assert!((theta_tx - 651.32156).abs() < 5e-6, "{theta_tx}");
}

#[test]
fn metrics_rejects_an_infeasible_strategy() {
    let dir = two_pool();
    std::fs::write(dir.path().join("q.json"), "[0.7, 0.7]").unwrap();
    let out = txsel(
        &[
            "metrics",
            "--strategy",
            "q.json",
            "--pool",
            "two.json",
            "--n",
            "2",
            "--b",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_rts_at_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(&["simulate", "--model", "rts", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["runs"], 50);
    let mean = v["theta_tx_mean"].as_f64().unwrap();
    let se = v["theta_tx_std"].as_f64().unwrap() / 50f64.sqrt();
    assert!((mean - 651.32).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn simulate_single_run_has_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "simulate",
            "--runs",
            "1",
            "--zipf",
            "10,0,100,1",
            "--b",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for key in ["theta_tx_std", "theta_fee_std", "per_validator_reward_std"] {
        assert_eq!(v[key].as_f64().unwrap(), 0.0, "{key}");
    }
}

#[test]
fn simulate_from_a_strategy_file() {
    let dir = two_pool();
    std::fs::write(
        dir.path().join("q.json"),
        "{\"model\": \"rfa\", \"q\": [1, 0]}",
    )
    .unwrap();
    let out = txsel(
        &[
            "simulate",
            "--strategy",
            "q.json",
            "--pool",
            "two.json",
            "--n",
            "2",
            "--b",
            "1",
            "--runs",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["theta_fee_mean"].as_f64().unwrap(), 4.0);
}

#[test]
fn sweep_standard_grid_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "sweep",
            "--vary",
            "s",
            "--standard-grid",
            "--m",
            "200",
            "--b",
            "20",
            "--sim",
            "2",
            "--out",
            "s.csv",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mut reader = csv::Reader::from_path(dir.path().join("s.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "vary_name",
            "vary_value",
            "strategy",
            "theta_tx_mean",
            "theta_tx_std",
            "theta_fee_mean",
            "theta_fee_std",
            "runs",
            "seed"
        ]
    );
    assert_eq!(reader.records().count(), 60);
}

#[test]
fn sweep_maxfee_standard_grid_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "sweep",
            "--vary",
            "maxfee",
            "--standard-grid",
            "--m",
            "100",
            "--b",
            "10",
            "--sim",
            "1",
            "--strategies",
            "rts",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    let values: Vec<String> = reader
        .records()
        .map(|r| r.unwrap()[1].to_string())
        .collect();
    let expected: Vec<String> = (1..=20).map(|i| (5 * i).to_string()).collect();
    assert_eq!(values, expected);
}

#[test]
fn sweep_single_value_single_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "sweep",
            "--vary",
            "m",
            "--values",
            "100",
            "--strategies",
            "rts",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("m,100,RTS,"));
}

#[test]
fn sweep_json_format() {
    let dir = tempfile::tempdir().unwrap();
    let out = txsel(
        &[
            "sweep",
            "--vary",
            "m",
            "--values",
            "100,200",
            "--strategies",
            "pts,cfs",
            "--sim",
            "2",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1]["strategy"], "NE_CFS");
    assert_eq!(rows[1]["runs"], 2);
}

#[test]
fn sweep_failed_cells_are_marked() {
    let dir = tempfile::tempdir().unwrap();
    // m = 50 cannot fill a block of 100.
    let out = txsel(
        &[
            "sweep",
            "--vary",
            "m",
            "--values",
            "50,200",
            "--strategies",
            "rts",
            "--sim",
            "2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "m,50,RTS,NaN,NaN,NaN,NaN,0,0");
    assert!(lines[2].ends_with(",2,0"));
}
