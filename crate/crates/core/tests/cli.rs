mod common;

use std::process::{Command, Output};

use common::{nested_grid_oracle, toy_1x1};
use twinmigrate::equilibrium::EquilibriumReport;
use twinmigrate::scenario::save_scenario;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinmigrate"))
        .args(args)
        .env_remove("TWINMIGRATE_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn invalid_scenario_file_exits_one_with_schema_text() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"version": 1, "msps": []}"#).unwrap();
    let o = run(&["solve", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema error"));
}

#[test]
fn invalid_spec_flag_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--n_msps", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_msps"));
}

#[test]
fn solve_on_toy_matches_grid_oracle_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = toy_1x1(2.0, 1.0, 0.2, 2.0, 100.0);
    let path = dir.path().join("toy.json");
    save_scenario(&scenario, &path).unwrap();
    let out = dir.path().join("out");
    let o = run(&["solve", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("certified"));

    let report: EquilibriumReport = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let g = nested_grid_oracle(&scenario, 4001, 4001);
    assert!((report.profile.prices[0] - g.price).abs() <= 1e-2);
    assert!((report.profile.demands[0][0] - g.demand).abs() <= 1e-2);
    assert!((report.mrp_utilities[0] - g.mrp_utility).abs() <= 1e-3);

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("outer_iter,p_1,b_11,U_L_sum,stop_stat"));
    assert_eq!(lines.count(), report.trace.len());
}

#[test]
fn fig3_solve_reports_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--fig3", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(2));
    let header = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(header.starts_with("outer_iter,p_1,p_2,b_11,b_12,b_21,b_22,b_31,b_32,U_L_sum,stop_stat\n"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let flag = run(&["solve", "--seed", "9", "--n_msps", "2", "--n_mrps", "2", "--out", a.to_str().unwrap()]);
    let env = Command::new(env!("CARGO_BIN_EXE_twinmigrate"))
        .args(["solve", "--n_msps", "2", "--n_mrps", "2", "--out", b.to_str().unwrap()])
        .env("TWINMIGRATE_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(flag.status.code(), env.status.code());
    assert_eq!(
        std::fs::read_to_string(a.join("report.json")).unwrap(),
        std::fs::read_to_string(b.join("report.json")).unwrap()
    );
}

#[test]
fn check_lists_trial_counts_and_passes() {
    let o = run(&["check", "--trials", "3", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    for l in lines {
        assert!(l.starts_with("PASS") && l.contains("3 trials"), "{l}");
    }
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let o = run(&[
        "sweep", "--axis", "n_mrps", "--values", "2,3", "--repeats", "1", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("axis_value,avg_msp_demand,avg_msp_utility,avg_mrp_price"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn unknown_sweep_axis_is_rejected() {
    let o = run(&["sweep", "--axis", "mean_gamma"]);
    assert_ne!(o.status.code(), Some(0));
}
