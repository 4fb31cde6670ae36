use super::*;
use crate::sim::{DelayModel, RunStatus, TraceRecord};

const PLAN: &str = r#"
case = "grid.m"
partition = "/abs/grid.part"
output = "out"

[base]
rho0 = 300.0
delay = { dist = "uniform", lo = 0.003, hi = 0.005 }

[[variants]]
name = "sync"
mode = "sync"
set = { tau = 1.18 }

[sweep]
modes = ["async"]
delay_scales = [1.0, 10.0]
seeds = [0, 1]
"#;

#[test]
fn plan_paths_resolve_against_the_plan_directory() {
    let plan = ExperimentPlan::parse(PLAN, Path::new("/plans")).unwrap();
    assert_eq!(plan.case, Path::new("/plans/grid.m"));
    assert_eq!(plan.partition, Path::new("/abs/grid.part"));
    assert_eq!(plan.output, Path::new("/plans/out"));
    assert_eq!(plan.plot_stride, 1);
}

#[test]
fn variants_merge_base_set_and_sweep() {
    let plan = ExperimentPlan::parse(PLAN, Path::new(".")).unwrap();
    let v = plan.variants().unwrap();
    assert_eq!(v.len(), 5);
    assert_eq!(v[0].name, "sync");
    assert_eq!(v[0].config.tau, 1.18);
    assert_eq!(v[0].config.rho0, 300.0);
    let names: Vec<&str> = v[1..].iter().map(|v| v.name.as_str()).collect();
    assert_eq!(
        names,
        ["async-x1-tau1.1-p1-s0", "async-x1-tau1.1-p1-s1", "async-x10-tau1.1-p1-s0", "async-x10-tau1.1-p1-s1"]
    );
    assert_eq!(v[3].config.delay, DelayModel::Uniform { lo: 0.03, hi: 0.05 });
    assert_eq!(v[4].config.seed, 1);
}

#[test]
fn bad_plans() {
    let dup = "case='a'\npartition='b'\noutput='c'\n[[variants]]\nname='x'\nmode='sync'\n[[variants]]\nname='x'\nmode='async'\n";
    let err = ExperimentPlan::parse(dup, Path::new(".")).unwrap().variants().unwrap_err();
    assert!(err.to_string().contains("duplicate"));
    let empty = "case='a'\npartition='b'\noutput='c'\n";
    assert!(ExperimentPlan::parse(empty, Path::new(".")).unwrap().variants().is_err());
    let unknown = "case='a'\npartition='b'\noutput='c'\n[[variants]]\nname='x'\nmode='sync'\nset={ taux = 2 }\n";
    assert!(ExperimentPlan::parse(unknown, Path::new(".")).unwrap().variants().is_err());
    assert!(ExperimentPlan::parse("case='a'\nfoo=1\n", Path::new(".")).is_err());
}

#[test]
fn trace_stems_are_file_safe() {
    assert_eq!(trace_stem(7, "async tau/1.1"), "007-async_tau_1.1");
}

fn synthetic(status: RunStatus, commits: usize) -> Trace {
    let mut trace = Trace::default();
    trace.push(TraceRecord::Header {
        mode: Mode::Async,
        n_regions: 2,
        neighbors: vec![vec![1], vec![0]],
        config: SimConfig::default(),
    });
    for i in 0..commits {
        let residue = 1.0 / (i + 1) as f64;
        trace.push(TraceRecord::Commit {
            t: i as f64 * 0.1,
            region: i % 2,
            nu: i / 2,
            rho: 1.0,
            rho_tilde: 1.0,
            residue: Some(residue),
            cost: 10.0,
            global_nu: i,
            max_residue: (i > 0).then_some(residue),
            max_mismatch: (i > 0).then_some(residue),
            objective: (i > 0).then_some(20.0),
        });
    }
    trace.push(TraceRecord::End { t: commits as f64 * 0.1, status, nu: vec![commits / 2; 2], objective: 20.0 });
    trace
}

#[test]
fn series_rows_follow_the_stride() {
    let trace = synthetic(RunStatus::Converged, 10);
    for (stride, rows) in [(1, 10), (3, 4), (10, 1), (0, 10)] {
        let csv = emit_convergence_plot_data(&trace, stride);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CONVERGENCE_HEADER);
        assert_eq!(lines.len(), 1 + rows + 1, "stride {stride}");
        assert!(lines.last().unwrap().ends_with(",converged"));
    }
    // the first commit precedes full initialization, so its system fields are blank
    let csv = emit_convergence_plot_data(&trace, 1);
    assert_eq!(csv.lines().nth(1).unwrap(), "0,0,,,,");
}

#[test]
fn failed_series_ends_at_the_failure() {
    let mut trace = synthetic(RunStatus::Failed, 3);
    if let Some(TraceRecord::End { t, .. }) = trace.records.last_mut() {
        *t = 0.25;
    }
    let csv = emit_convergence_plot_data(&trace, 1);
    assert_eq!(csv.lines().last().unwrap(), "0.25,2,0.3333333333333333,0.3333333333333333,20,failed");
}

#[test]
fn summaries_come_from_the_trace() {
    let trace = synthetic(RunStatus::MaxedOut, 4);
    let s = RunSummary::from_trace("x", &trace, Some(19.0)).unwrap();
    assert_eq!(s.status, RunStatus::MaxedOut);
    assert_eq!(s.nu, vec![2, 2]);
    assert_eq!((s.delay_lo, s.delay_hi), (0.003, 0.005));
    assert!((s.gap.unwrap() - 100.0 / 19.0).abs() < 1e-12);
    assert!(RunSummary::from_trace("x", &Trace::default(), None).is_err());
    let table = methods_csv(&[s]);
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("variant,mode,tau,p,seed,delay_lo_s,delay_hi_s,nu_max,nu_min,nu_mean,gap_pct"));
}
