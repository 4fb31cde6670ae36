mod common;

use std::fs;
use std::path::Path;

use gridadmm::exec::Executor;
use gridadmm::experiment::{report, run_plan, ExperimentPlan};
use gridadmm::sim::{self, Mode, RunStatus, SimConfig, Trace, TraceRecord};

fn plan(out: &Path, body: &str) -> ExperimentPlan {
    let text = format!(
        "case = {:?}\npartition = {:?}\noutput = {:?}\nplot_stride = 3\n{body}",
        common::fixture_path("case30.m"),
        common::fixture_path("case30_3.json"),
        out,
    );
    ExperimentPlan::parse(&text, Path::new("/")).unwrap()
}

const METHODS: &str = r#"
[base]
rho0 = 300.0
p = 0.1
max_iterations = 200
delay = { dist = "uniform", lo = 0.03, hi = 0.05 }

[[variants]]
name = "sync-tau1.18"
mode = "sync"
set = { tau = 1.18 }

[[variants]]
name = "async-tau1.18"
mode = "async"
set = { tau = 1.18 }

[[variants]]
name = "async-tau1.10"
mode = "async"
set = { tau = 1.10 }
"#;

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["", "series", "traces"] {
        let d = dir.join(sub);
        let mut names: Vec<_> = fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn methods_plan_gives_three_rows_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let outcome = run_plan(&plan(&a, METHODS), Executor::Parallel).unwrap();
    assert_eq!(outcome.outcomes.len(), 3);
    let methods = fs::read_to_string(a.join("methods.csv")).unwrap();
    assert_eq!(methods.lines().count(), 4);
    assert!(methods.lines().nth(1).unwrap().starts_with("000-sync-tau1.18,sync,1.18,"));

    // a second run, sequential this time, writes the same bytes
    let b = tmp.path().join("b");
    run_plan(&plan(&b, METHODS), Executor::Sequential).unwrap();
    assert_eq!(read_all(&a), read_all(&b));

    // and re-rendering from traces alone changes nothing
    let before = read_all(&a);
    fs::remove_dir_all(a.join("series")).unwrap();
    fs::remove_file(a.join("methods.csv")).unwrap();
    let summaries = report(&a, 3).unwrap();
    assert_eq!(summaries.len(), 3);
    assert_eq!(read_all(&a), before);
}

#[test]
fn single_variant_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "[base]\nrho0 = 300.0\n[[variants]]\nname = \"only\"\nmode = \"async\"\n";
    let outcome = run_plan(&plan(tmp.path(), body), Executor::Parallel).unwrap();
    assert_eq!(outcome.outcomes.len(), 1);
    assert!(outcome.all_ok());
    for (file, rows) in [("methods.csv", 1), ("gap_vs_tau.csv", 1), ("na_vs_delay.csv", 3)] {
        let text = fs::read_to_string(tmp.path().join(file)).unwrap();
        assert_eq!(text.lines().count(), 1 + rows, "{file}");
    }
    let na = fs::read_to_string(tmp.path().join("na_vs_delay.csv")).unwrap();
    assert_eq!(na.lines().next().unwrap(), "region,0.003-0.005");
}

#[test]
fn delay_sweep_gives_one_na_column_per_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"
[base]
rho0 = 300.0
p = 0.1
max_iterations = 40
delay = { dist = "uniform", lo = 0.003, hi = 0.005 }

[sweep]
modes = ["async"]
delay_scales = [1.0, 10.0, 100.0, 200.0, 400.0]
"#;
    run_plan(&plan(tmp.path(), body), Executor::Parallel).unwrap();
    let na = fs::read_to_string(tmp.path().join("na_vs_delay.csv")).unwrap();
    let lines: Vec<&str> = na.lines().collect();
    assert_eq!(lines[0], "region,0.003-0.005,0.03-0.05,0.3-0.5,0.6-1,1.2-2");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn converged_series_ends_below_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "[base]\nrho0 = 300.0\n[[variants]]\nname = \"s\"\nmode = \"sync\"\n";
    run_plan(&plan(tmp.path(), body), Executor::Parallel).unwrap();
    let trace_path = tmp.path().join("traces/000-s.ndjson");
    let trace = Trace::read_from(std::io::BufReader::new(fs::File::open(trace_path).unwrap())).unwrap();
    assert!(matches!(trace.end(), Some(TraceRecord::End { status: RunStatus::Converged, .. })));
    let commits = trace.commits().count();
    let series = fs::read_to_string(tmp.path().join("series/000-s.csv")).unwrap();
    let rows: Vec<&str> = series.lines().skip(1).collect();
    assert_eq!(rows.len(), commits.div_ceil(3) + 1);
    let last: Vec<&str> = rows.last().unwrap().split(',').collect();
    assert!(last[2].parse::<f64>().unwrap() <= 1e-3);
    assert!(last[3].parse::<f64>().unwrap() <= 1e-3);
    assert_eq!(last[5], "converged");
}

#[test]
fn bundled_plans_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["case30_methods.toml", "case30_delays.toml", "case30_tau.toml"] {
        let plan = ExperimentPlan::load(&configs.join(name)).unwrap();
        assert!(plan.case.exists(), "{name}");
        assert!(!plan.variants().unwrap().is_empty());
    }
    assert_eq!(ExperimentPlan::load(&configs.join("case30_delays.toml")).unwrap().variants().unwrap().len(), 50);
}

#[test]
fn eight_region_split_converges() {
    let (net, partition) = common::setup("case118.m", "case118_8.part");
    let reference = common::centralized(&net);
    let config = SimConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/case118_8.toml")).unwrap();
    let r = sim::run(&net, &partition, &config, Mode::Sync).unwrap().with_reference(reference);
    assert_eq!(r.status, RunStatus::Converged);
    assert!(r.gap.unwrap().abs() < 1.0, "gap {:?}", r.gap);
}
