use twinmigrate::equilibrium::{admm_solve, trace_header, write_trace_csv, AdmmConfig};
use twinmigrate::scenario::fig3_scenario;
use twinmigrate::sweep::{run_sweep, sweep_header, write_sweep_csv, SweepAxis, SweepConfig};

const SWEEP_GOLDEN: &str = include_str!("golden/sweep_header_3x2.csv");
const TRACE_GOLDEN: &str = include_str!("golden/trace_header_3x2.csv");

fn first_line(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).lines().next().unwrap_or_default().to_string()
}

#[test]
fn sweep_header_matches_golden() {
    assert_eq!(sweep_header(3, 2).join(","), SWEEP_GOLDEN.trim_end());
    let mut cfg = SweepConfig::new(SweepAxis::MeanCost, 1, 0);
    cfg.values = vec![0.1];
    cfg.base.n_msps = 3;
    cfg.base.n_mrps = 2;
    let points = run_sweep(&cfg).unwrap();
    let mut buf = Vec::new();
    write_sweep_csv(&points, &mut buf).unwrap();
    assert_eq!(first_line(&buf), SWEEP_GOLDEN.trim_end());
}

#[test]
fn trace_header_matches_golden() {
    assert_eq!(trace_header(3, 2).join(","), TRACE_GOLDEN.trim_end());
    let report = admm_solve(&fig3_scenario(), &AdmmConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&report.trace, &mut buf).unwrap();
    assert_eq!(first_line(&buf), TRACE_GOLDEN.trim_end());
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), report.trace.len() + 1);
}

#[test]
fn wide_trace_headers_separate_indices() {
    let h = trace_header(10, 2);
    assert_eq!(h[3], "b_1_1");
    assert_eq!(h[h.len() - 3], "b_10_2");
}
