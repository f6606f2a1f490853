//! End-to-end checks of the command-line interface and its artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn riskcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskcal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn small_sim_args<'a>(out_dir: &'a str, seed: &'a str) -> Vec<&'a str> {
    vec![
        "simulate",
        "--trials",
        "6",
        "--max-labels",
        "300",
        "--grid-size",
        "200",
        "--seed",
        seed,
        "--out-dir",
        out_dir,
        "--jobs",
        "2",
    ]
}

#[test]
fn simulate_writes_all_artifacts_with_method_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let mut args = small_sim_args(out_s, "7");
    args.extend(["--methods", "all,oblivious,pretrain,learned"]);
    let res = riskcal(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 4, "one block per method");
    for m in methods {
        assert!(m["mean_final_beta"].as_f64().unwrap() <= 1.0);
        assert!(m["violation_rate"].is_number());
        assert!(m["mean_query_fraction"].is_number());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("run_manifest.json"))).unwrap();
    assert_eq!(manifest["seed_roster"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["rho_oracle"], "closed_form");

    let curve = read(&out.join("beta_vs_labels.csv"));
    assert!(curve.starts_with("method,labels,trials,mean_beta_hat,ci_lower,ci_upper"));
    // one row per (method, 50-label checkpoint), labels 0,50,...,300
    let all_rows: Vec<&str> = curve.lines().filter(|l| l.starts_with("all,")).collect();
    assert_eq!(all_rows.len(), 7);
}

#[test]
fn same_seed_reproduces_result_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(riskcal(&small_sim_args(a.to_str().unwrap(), "7")).status.success());
    assert!(riskcal(&small_sim_args(b.to_str().unwrap(), "7")).status.success());
    for file in [
        "trials.jsonl",
        "summary.json",
        "violation_rate.csv",
        "final_beta.csv",
        "beta_vs_labels.csv",
    ] {
        assert_eq!(read(&a.join(file)), read(&b.join(file)), "{file} differs");
    }
    // different seed must actually change the results
    let c = dir.path().join("c");
    assert!(riskcal(&small_sim_args(c.to_str().unwrap(), "8")).status.success());
    assert_ne!(read(&a.join("trials.jsonl")), read(&c.join("trials.jsonl")));
}

#[test]
fn report_is_a_pure_function_of_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(riskcal(&small_sim_args(out.to_str().unwrap(), "3")).status.success());
    let before: Vec<String> = ["summary.json", "violation_rate.csv", "final_beta.csv", "beta_vs_labels.csv"]
        .iter()
        .map(|f| read(&out.join(f)))
        .collect();
    let res = riskcal(&["report", out.to_str().unwrap()]);
    assert!(res.status.success());
    let after: Vec<String> = ["summary.json", "violation_rate.csv", "final_beta.csv", "beta_vs_labels.csv"]
        .iter()
        .map(|f| read(&out.join(f)))
        .collect();
    assert_eq!(before, after, "report must regenerate identical outputs");
    assert!(String::from_utf8_lossy(&res.stdout).contains("method"));
}

#[test]
fn report_on_empty_dir_fails_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = riskcal(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn calibrate_runs_on_a_synthetic_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.bin");
    let res = riskcal(&[
        "synth",
        "--classes",
        "10",
        "--rows",
        "30000",
        "--concentration",
        "0.5",
        "--seed",
        "3",
        "--out",
        scores.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let out = dir.path().join("run");
    let res = riskcal(&[
        "calibrate",
        "--scores",
        scores.to_str().unwrap(),
        "--trials",
        "10",
        "--max-labels",
        "500",
        "--grid-size",
        "200",
        "--seed",
        "5",
        "--methods",
        "oblivious,pretrain",
        "--out-dir",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["rho_oracle"], "holdout_empirical");
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    for m in methods {
        // budget adherence is reported per method
        let frac = m["mean_query_fraction"].as_f64().unwrap();
        assert!(frac > 0.0 && frac <= 1.0);
        // the stop rule is honored in every trial
        assert!(m["mean_labels"].as_f64().unwrap() <= 500.0 + 1.0);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("run_manifest.json"))).unwrap();
    assert!(manifest["beta_star"].as_f64().unwrap() < 1.0);
    assert_eq!(manifest["config"]["data"]["holdout_rows"], 10000);
}

#[test]
fn calibrate_missing_file_exits_with_data_error() {
    let res = riskcal(&["calibrate", "--scores", "/nonexistent/scores.csv"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("/nonexistent/scores.csv"), "{err}");
}

#[test]
fn malformed_score_rows_report_the_row_number() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("bad.csv");
    std::fs::write(&scores, "id,label,p0,p1\nr0,0,0.6,0.4\nr1,0,0.6,0.3\n").unwrap();
    let res = riskcal(&["calibrate", "--scores", scores.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("row 2"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let res = riskcal(&["simulate", "--methods", "bogus"]);
    assert_eq!(res.status.code(), Some(1));
    let res = riskcal(&["simulate", "--max-labels", "10", "--max-steps", "10"]);
    assert_eq!(res.status.code(), Some(1));
    let res = riskcal(&["frobnicate"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn trace_writes_step_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = riskcal(&[
        "simulate",
        "--trials",
        "1",
        "--max-labels",
        "40",
        "--grid-size",
        "100",
        "--seed",
        "1",
        "--methods",
        "oblivious",
        "--trace",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let lines: Vec<String> = read(&out.join("trials.jsonl"))
        .lines()
        .map(String::from)
        .collect();
    let steps = lines.iter().filter(|l| l.contains("\"type\":\"step\"")).count();
    let trials = lines.iter().filter(|l| l.contains("\"type\":\"trial\"")).count();
    assert_eq!(trials, 1);
    assert!(steps >= 40, "one line per step, got {steps}");
    // steps precede their trial summary and carry the method
    assert!(lines[0].contains("\"method\":\"oblivious\""));
}

#[test]
fn config_file_is_used_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!(
            "trials = 2\nmax_labels = 100\ngrid_size = 120\nseed = 9\nmethods = [\"all\"]\nout_dir = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();
    let res = riskcal(&["simulate", "--config", cfg.to_str().unwrap(), "--trials", "3"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("run_manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["trials"], 3, "flag overrides file");
    assert_eq!(manifest["config"]["trial"]["seed"], 9, "file fills the rest");
}

#[test]
fn out_dir_env_var_supplies_the_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from-env");
    let res = Command::new(env!("CARGO_BIN_EXE_riskcal"))
        .args([
            "simulate",
            "--trials",
            "1",
            "--max-labels",
            "30",
            "--grid-size",
            "80",
            "--methods",
            "all",
        ])
        .env("RISKCAL_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("run_manifest.json").exists());
}
