use std::path::PathBuf;
use std::process::{Command, Output};

fn annuity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annuity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("annuity-cli-{}-{name}", std::process::id()));
    std::fs::write(&path, contents).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn solve_writes_value_table() {
    let out = annuity(&["solve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("node_id,n,mu,x,V,W,M"));
    let nodes: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(nodes.len(), 3);
    assert!(stderr(&out).contains("Case2"));
}

#[test]
fn solve_json_lists_every_node() {
    let out = annuity(&["--scenario", "negative-fee", "solve", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let nodes = v["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 3);
    assert_eq!(nodes[0]["regime"], "Case4");
}

#[test]
fn summary_moves_to_stdout_with_out() {
    let path = std::env::temp_dir().join(format!("annuity-cli-{}-out.csv", std::process::id()));
    let out = annuity(&["solve", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("regime"));
    let written = std::fs::read_to_string(&path).unwrap();
    assert!(written.starts_with("node_id,"));
    std::fs::remove_file(path).ok();
}

#[test]
fn single_state_config_solves_in_closed_form() {
    let cfg = r#"{"theta":0.0,"alpha":0.0615,"sigma":0.152952,"rho":0.04,"rho_hat":0.06,
        "mu_hat":0.061667,"K":1500,"nu":0.35,"N":0,"lambdas":[],"mu0":0.044623}"#;
    let path = temp_file("n0.json", cfg);
    let out = annuity(&["--config", path.to_str().unwrap(), "solve", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let nodes = v["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 1);
    assert_eq!(nodes[0]["method"], "closed-form");
    std::fs::remove_file(path).ok();
}

#[test]
fn ill_posed_model_exits_2() {
    let cfg = r#"{"theta":0.5,"alpha":0.0615,"sigma":0.15,"rho":0.04,"rho_hat":0.06,
        "mu_hat":0.06,"K":1500,"nu":0.35,"N":0,"lambdas":[],"mu0":0.04}"#;
    let path = temp_file("ill.json", cfg);
    let out = annuity(&["--config", path.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("ill-posed"));
    std::fs::remove_file(path).ok();
}

#[test]
fn malformed_config_exits_1() {
    let path = temp_file("bad.json", "{\"theta\":");
    let out = annuity(&["--config", path.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_file(path).ok();

    let out = annuity(&["--config", "/nonexistent/annuity.json", "solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_strategies_exit_1() {
    let out = annuity(&["solve", "--stage-solver", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("auto"));
    let out = annuity(&["simulate", "--estimator", "nope", "--paths", "100"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grid_that_cannot_be_widened_enough_exits_3() {
    let out = annuity(&["solve", "--x-lo", "0.001", "--x-hi", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("widenings"));
}

#[test]
fn sweep_reports_failed_values_as_rows() {
    let out = annuity(&["sweep", "--parameter", "sigma", "--values=-0.1,0.152952"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "parameter,value,regime,threshold,threshold_2,status,message");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",FAILED,"));
    assert!(rows[2].contains(",Case2,") && rows[2].contains(",ok,"));
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let out = annuity(&["sweep", "--parameter", "rho"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn output_is_deterministic() {
    let args = ["simulate", "--paths", "2000", "--x0", "5000,20000"];
    let a = annuity(&args);
    let b = annuity(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let c = annuity(&["simulate", "--paths", "2000", "--x0", "5000,20000", "--seed", "7"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn calibrate_recovers_objective_mortality() {
    let out = annuity(&["calibrate", "--target", "16.2162", "--mode", "objective"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    let mu: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((mu - 0.061667).abs() < 1e-5, "{mu}");
    let out = annuity(&["calibrate", "--target", "16.2162", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_without_mc_passes_on_defaults() {
    let out = annuity(&["verify", "--no-mc"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("check,node_id,"));
    assert!(text.lines().skip(1).all(|l| l.contains(",true,")), "{text}");
}

#[test]
fn reproduce_lists_reference_rows() {
    let out = annuity(&["reproduce-paper", "--no-arbitration"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("scenario,quantity,computed,reference"));
    assert!(text
        .lines()
        .any(|l| l.starts_with("PositiveFee,root regime,Case2,Case2")));
}
