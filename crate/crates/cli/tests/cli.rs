//! End-to-end tests of the compiled `userdp` binary: flag parsing, exit
//! codes, JSON output shapes, and byte-level reproducibility of CSV files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn userdp_cmd() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_userdp"));
    cmd.env_remove("USERDP_BUDGET");
    cmd
}

fn run(args: &[&str]) -> Output {
    userdp_cmd().args(args).output().expect("run userdp")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", text(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).expect("write fixture");
}

const SELECT_CONFIG: &str = r#"{
    "task": "hypothesis-select",
    "n_grid": [12],
    "m_grid": [1, 2],
    "alpha": 0.3,
    "epsilon": 2.0,
    "trials": 3,
    "seed": 9,
    "hypothesis_select": {
        "candidates": [[0.9, 0.1], [0.1, 0.9]],
        "source": [0.9, 0.1]
    }
}"#;

const CONSTANT_MECH: &str = r#"{
    "kind": "constant",
    "input_users": 2,
    "m": 1,
    "universe_size": 2,
    "output": [0.5, 0.5]
}"#;

const RR_COUNT_MECH: &str = r#"{
    "kind": "rr_count",
    "input_users": 3,
    "m": 2,
    "eps0": 1.0
}"#;

#[test]
fn params_reports_the_wrapper_parameters() {
    let out = run(&["params", "--epsilon", "0.3", "--delta", "0.03"]);
    let v = stdout_json(&out);
    assert_eq!(v["kappa"], 51);
    assert!((v["eps_bar"].as_f64().unwrap() - 0.1).abs() < 1e-15);
    assert!(v["delta_bar"].as_f64().unwrap() > 0.0);
}

#[test]
fn no_arguments_prints_usage_and_fails() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["audit", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["params", "--epsilon", "0.3", "--delta", "0.03", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_params_are_validation_errors() {
    let out = run(&["params", "--epsilon", "-1", "--delta", "0.03"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("epsilon"));
}

#[test]
fn audit_passes_a_constant_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, CONSTANT_MECH);
    let out = run(&[
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--epsilon",
        "0.1",
        "--delta",
        "0",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["max_divergence"], 0.0);
    assert_eq!(v["mode"], "exhaustive");
}

#[test]
fn audit_item_level_and_sampled_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, RR_COUNT_MECH);
    let exhaustive = run(&[
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--level",
        "item",
        "--epsilon",
        "1.0",
        "--delta",
        "0",
    ]);
    let v = stdout_json(&exhaustive);
    assert_eq!(v["verdict"], "pass");

    let sampled = run(&[
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--mode",
        "sampled",
        "--level",
        "item",
        "--epsilon",
        "1.0",
        "--delta",
        "0",
        "--budget",
        "50",
        "--seed",
        "4",
    ]);
    let v = stdout_json(&sampled);
    assert_eq!(v["pairs_checked"], 50);
    assert!(v["max_divergence"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn audit_mechanism_file_errors_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, r#"{"kind": "no_such_mechanism"}"#);
    let out = run(&[
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let missing = run(&[
        "audit",
        "--mechanism",
        dir.path().join("nope.json").to_str().unwrap(),
        "--epsilon",
        "1",
        "--delta",
        "0",
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn exceeding_the_budget_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, RR_COUNT_MECH);
    let out = run(&[
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--delta",
        "0",
        "--budget",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", text(&out.stderr));
}

#[test]
fn budget_env_var_is_the_default_and_the_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(&mech, RR_COUNT_MECH);
    let args = [
        "audit",
        "--mechanism",
        mech.to_str().unwrap(),
        "--epsilon",
        "1.0",
        "--delta",
        "0",
    ];
    let starved = userdp_cmd()
        .args(args)
        .env("USERDP_BUDGET", "1")
        .output()
        .unwrap();
    assert_eq!(starved.status.code(), Some(2));

    let flag_wins = userdp_cmd()
        .args(args)
        .arg("--budget")
        .arg("100000")
        .env("USERDP_BUDGET", "1")
        .output()
        .unwrap();
    assert_eq!(flag_wins.status.code(), Some(0));

    let garbled = userdp_cmd()
        .args(args)
        .env("USERDP_BUDGET", "plenty")
        .output()
        .unwrap();
    assert_eq!(garbled.status.code(), Some(1));
    assert!(text(&garbled.stderr).contains("USERDP_BUDGET"));
}

#[test]
fn delstab_demo_reports_outcome_and_exact_law() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(
        &mech,
        r#"{"kind": "rr_count", "input_users": 2, "m": 1, "eps0": 1.0}"#,
    );
    // kappa = 4 at (6, 0.5), so the wrapper wants 2 + 16 users.
    let users: Vec<Vec<usize>> = (0..18).map(|i| vec![i % 2]).collect();
    let ds = dir.path().join("ds.json");
    write(
        &ds,
        &serde_json::json!({"universe_size": 2, "m": 1, "users": users}).to_string(),
    );
    let out = run(&[
        "delstab-demo",
        "--mechanism",
        mech.to_str().unwrap(),
        "--dataset",
        dir.path().join("ds.json").to_str().unwrap(),
        "--epsilon",
        "6",
        "--delta",
        "0.5",
        "--seed",
        "5",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["params"]["kappa"], 4);
    assert!(v["outcome"] == "bottom" || v["outcome"]["output"].is_u64());
    let masses = v["exact_law"]["output_masses"].as_array().unwrap();
    assert_eq!(masses.len(), 3);
    let total: f64 = masses.iter().map(|x| x.as_f64().unwrap()).sum::<f64>()
        + v["exact_law"]["bottom_mass"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-9);
    let _ = ds;
}

#[test]
fn delstab_demo_rejects_a_dataset_of_the_wrong_arity() {
    let dir = tempfile::tempdir().unwrap();
    let mech = dir.path().join("mech.json");
    write(
        &mech,
        r#"{"kind": "rr_count", "input_users": 2, "m": 1, "eps0": 1.0}"#,
    );
    let ds = dir.path().join("ds.json");
    write(&ds, r#"{"universe_size": 2, "m": 1, "users": [[0], [1]]}"#);
    let out = run(&[
        "delstab-demo",
        "--mechanism",
        mech.to_str().unwrap(),
        "--dataset",
        ds.to_str().unwrap(),
        "--epsilon",
        "6",
        "--delta",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_writes_byte_identical_csv_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, SELECT_CONFIG);
    let mut paths = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let csv = dir.path().join(name);
        let summary = dir.path().join(format!("{name}.json"));
        let out = run(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", text(&out.stderr));
        paths.push((csv, summary));
    }
    let a = fs::read(&paths[0].0).unwrap();
    let b = fs::read(&paths[1].0).unwrap();
    assert_eq!(a, b);
    assert_eq!(fs::read(&paths[0].1).unwrap(), fs::read(&paths[1].1).unwrap());

    let body = String::from_utf8(a).unwrap();
    let mut lines = body.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task,n,m,epsilon,alpha,trials,success_rate,median_error,seed"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("hypothesis-select,12,1,2,0.3,3,"));
    assert!(rows[1].starts_with("hypothesis-select,12,2,2,0.3,3,"));
}

#[test]
fn experiment_with_an_empty_grid_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let config = SELECT_CONFIG.replace("\"n_grid\": [12]", "\"n_grid\": []");
    write(&cfg, &config);
    let csv = dir.path().join("out.csv");
    let out = run(&[
        "experiment",
        "--config",
        cfg.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read_to_string(&csv).unwrap(),
        "task,n,m,epsilon,alpha,trials,success_rate,median_error,seed\n"
    );
}

#[test]
fn single_task_subcommand_emits_json_and_a_trial_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, SELECT_CONFIG);
    let log = dir.path().join("trials.csv");
    let out = run(&[
        "hypothesis-select",
        "--config",
        cfg.to_str().unwrap(),
        "--trial-log",
        log.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["task"], "hypothesis-select");
    assert_eq!(v["cells"].as_array().unwrap().len(), 2);

    let log_body = fs::read_to_string(&log).unwrap();
    let mut lines = log_body.lines();
    assert_eq!(lines.next().unwrap(), "task,n,m,trial,error,success");
    assert_eq!(lines.count(), 6);
}

#[test]
fn subcommand_rejects_a_config_for_a_different_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, SELECT_CONFIG);
    let out = run(&["learn-discrete", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("hypothesis-select"));
}

#[test]
fn config_schema_violations_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"task": "hypothesis-select", "surprise": true}"#);
    let out = run(&["hypothesis-select", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("schema"));
}
