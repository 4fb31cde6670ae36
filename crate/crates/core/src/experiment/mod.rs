//! Batch runs over configuration variants and the CSV tables built from
//! their traces.
//!
//! Every table is derived from stored traces alone (plus the cached
//! centralized objective), so re-rendering a finished plan reproduces the
//! same bytes.

mod tables;

pub use tables::{
    emit_convergence_plot_data, gap_vs_tau_csv, methods_csv, na_vs_delay_csv, RunSummary, CONVERGENCE_HEADER,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::case::parse_case;
use crate::exec::Executor;
use crate::opf::{solve_centralized, Network, SolveStatus, SolverOptions, CENTRAL_TOL, MAX_ITER};
use crate::partition::{build_partition, Partition, RegionSpec};
use crate::sim::{self, Mode, RunResult, SimConfig, Trace};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("plan: {0}")]
    Plan(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("case: {0}")]
    Case(#[from] crate::case::CaseError),
    #[error("partition: {0}")]
    Partition(#[from] crate::partition::PartitionError),
    #[error("simulation: {0}")]
    Sim(#[from] crate::sim::SimError),
    #[error("centralized reference solve ended {0:?}")]
    Reference(SolveStatus),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// One explicitly listed run; `set` overrides fields of the plan's base
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub set: Map<String, Value>,
}

/// Cartesian product of runs. Delay scales multiply the base delay model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub delay_scales: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub case: PathBuf,
    pub partition: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub base: Map<String, Value>,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Keep every n-th commit in the convergence series.
    #[serde(default = "one")]
    pub plot_stride: usize,
}

fn one() -> usize {
    1
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub mode: Mode,
    pub config: SimConfig,
}

impl ExperimentPlan {
    /// Parses TOML, or JSON when the text starts with `{`. Relative paths are
    /// resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut plan: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ExperimentError::Plan(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| ExperimentError::Plan(e.to_string()))?
        };
        for p in [&mut plan.case, &mut plan.partition, &mut plan.output] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Explicit variants followed by the sweep, in a fixed order.
    pub fn variants(&self) -> Result<Vec<Variant>, ExperimentError> {
        let base = Value::Object(self.base.clone());
        let resolve = |set: &Map<String, Value>| -> Result<SimConfig, ExperimentError> {
            let mut merged = serde_json::to_value(SimConfig::default()).expect("config serializes");
            overlay(&mut merged, &base);
            overlay(&mut merged, &Value::Object(set.clone()));
            serde_json::from_value(merged).map_err(|e| ExperimentError::Plan(e.to_string()))
        };
        let mut out = Vec::new();
        for v in &self.variants {
            out.push(Variant { name: v.name.clone(), mode: v.mode, config: resolve(&v.set)? });
        }
        if let Some(sweep) = &self.sweep {
            let base_config = resolve(&Map::new())?;
            let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
            let taus = or_base(&sweep.taus, base_config.tau);
            let scales = or_base(&sweep.delay_scales, 1.0);
            let ps = or_base(&sweep.p, base_config.p);
            let seeds = if sweep.seeds.is_empty() { vec![base_config.seed] } else { sweep.seeds.clone() };
            for &mode in &sweep.modes {
                for &scale in &scales {
                    for &tau in &taus {
                        for &p in &ps {
                            for &seed in &seeds {
                                let config = SimConfig {
                                    tau,
                                    p,
                                    seed,
                                    delay: base_config.delay.scaled(scale),
                                    ..base_config.clone()
                                };
                                let name = format!("{mode}-x{scale}-tau{tau}-p{p}-s{seed}");
                                out.push(Variant { name, mode, config });
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(ExperimentError::Plan("plan has no variants".into()));
        }
        let mut names: Vec<&str> = out.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(ExperimentError::Plan(format!("duplicate variant name `{}`", w[0])));
        }
        Ok(out)
    }
}

fn overlay(target: &mut Value, patch: &Value) {
    if let (Value::Object(t), Value::Object(p)) = (target, patch) {
        for (k, v) in p {
            t.insert(k.clone(), v.clone());
        }
    }
}

/// Case, partition and cached reference objective shared by all variants.
#[derive(Debug, Clone)]
pub struct Setup {
    pub net: Network,
    pub partition: Partition,
    pub centralized: f64,
}

impl Setup {
    pub fn load(case: &Path, partition: &Path, beta_minus: f64, beta_plus: f64) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(case).map_err(|e| io_err(case, e))?;
        let grid = parse_case(&text)?;
        let spec_text = fs::read_to_string(partition).map_err(|e| io_err(partition, e))?;
        let spec = RegionSpec::parse(&spec_text)?;
        let partition = build_partition(&grid, &spec, beta_minus, beta_plus)?;
        for w in &partition.warnings {
            log::warn!("{w}");
        }
        let net = Network::new(grid);
        let reference = solve_centralized(&net, &SolverOptions { tol: CENTRAL_TOL, max_iter: MAX_ITER });
        if reference.status == SolveStatus::Infeasible {
            return Err(ExperimentError::Reference(reference.status));
        }
        Ok(Self { net, partition, centralized: reference.cost })
    }
}

#[derive(Debug)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub result: Result<RunResult, String>,
}

#[derive(Debug)]
pub struct PlanOutcome {
    pub centralized: f64,
    pub outcomes: Vec<VariantOutcome>,
    pub summaries: Vec<RunSummary>,
}

impl PlanOutcome {
    /// True when every variant ran and converged.
    pub fn all_ok(&self) -> bool {
        self.outcomes
            .iter()
            .all(|o| matches!(&o.result, Ok(r) if r.status == sim::RunStatus::Converged))
    }
}

/// File stem of the trace of the `index`-th variant.
pub fn trace_stem(index: usize, name: &str) -> String {
    let clean: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect();
    format!("{index:03}-{clean}")
}

/// Runs every variant, writes traces, convergence series and summary
/// tables under `plan.output`.
pub fn run_plan(plan: &ExperimentPlan, executor: Executor) -> Result<PlanOutcome, ExperimentError> {
    let variants = plan.variants()?;
    let first = &variants[0].config;
    let setup = Setup::load(&plan.case, &plan.partition, first.beta_minus, first.beta_plus)?;
    let partitions: Vec<Option<Partition>> = variants
        .iter()
        .map(|v| {
            if (v.config.beta_minus, v.config.beta_plus) == (first.beta_minus, first.beta_plus) {
                Ok(None)
            } else {
                let text = fs::read_to_string(&plan.partition).map_err(|e| io_err(&plan.partition, e))?;
                let spec = RegionSpec::parse(&text)?;
                Ok(Some(build_partition(&setup.net.case, &spec, v.config.beta_minus, v.config.beta_plus)?))
            }
        })
        .collect::<Result<_, ExperimentError>>()?;

    let indexed: Vec<usize> = (0..variants.len()).collect();
    let results = executor.map(&indexed, |&i| {
        let v = &variants[i];
        let partition = partitions[i].as_ref().unwrap_or(&setup.partition);
        sim::run_with(&setup.net, partition, &v.config, v.mode, Executor::Sequential)
            .map(|r| r.with_reference(setup.centralized))
            .map_err(|e| e.to_string())
    });

    let traces_dir = plan.output.join("traces");
    let series_dir = plan.output.join("series");
    for dir in [&plan.output, &traces_dir, &series_dir] {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_reference(&plan.output, setup.centralized)?;

    let mut outcomes = Vec::with_capacity(variants.len());
    let mut summaries = Vec::new();
    for (i, (variant, result)) in variants.into_iter().zip(results).enumerate() {
        let stem = trace_stem(i, &variant.name);
        match &result {
            Ok(run) => {
                let path = traces_dir.join(format!("{stem}.ndjson"));
                fs::write(&path, run.trace.to_ndjson()).map_err(|e| io_err(&path, e))?;
                let path = series_dir.join(format!("{stem}.csv"));
                fs::write(&path, emit_convergence_plot_data(&run.trace, plan.plot_stride))
                    .map_err(|e| io_err(&path, e))?;
                summaries.push(RunSummary::from_trace(&stem, &run.trace, Some(setup.centralized))?);
                if run.status != sim::RunStatus::Converged {
                    log::warn!("variant {}: {}", variant.name, run.diagnostic.as_deref().unwrap_or("did not converge"));
                }
            }
            Err(e) => log::error!("variant {} failed: {e}", variant.name),
        }
        outcomes.push(VariantOutcome { variant, result });
    }
    write_tables(&plan.output, &summaries)?;
    Ok(PlanOutcome { centralized: setup.centralized, outcomes, summaries })
}

const REFERENCE_FILE: &str = "reference.json";

fn write_reference(dir: &Path, centralized: f64) -> Result<(), ExperimentError> {
    let path = dir.join(REFERENCE_FILE);
    let text = serde_json::to_string_pretty(&serde_json::json!({ "centralized_objective": centralized }))
        .expect("json value serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

fn read_reference(dir: &Path) -> Result<Option<f64>, ExperimentError> {
    let path = dir.join(REFERENCE_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    Ok(v.get("centralized_objective").and_then(Value::as_f64))
}

fn write_tables(dir: &Path, summaries: &[RunSummary]) -> Result<(), ExperimentError> {
    for (name, text) in [
        ("methods.csv", methods_csv(summaries)),
        ("na_vs_delay.csv", na_vs_delay_csv(summaries)),
        ("gap_vs_tau.csv", gap_vs_tau_csv(summaries)),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Rebuilds the summary tables and convergence series of a finished plan
/// from the traces stored under `dir`.
pub fn report(dir: &Path, plot_stride: usize) -> Result<Vec<RunSummary>, ExperimentError> {
    let reference = read_reference(dir)?;
    let traces_dir = dir.join("traces");
    let mut paths: Vec<PathBuf> = fs::read_dir(&traces_dir)
        .map_err(|e| io_err(&traces_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    paths.sort();
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| io_err(&series_dir, e))?;
    let mut summaries = Vec::new();
    for path in paths {
        let file = fs::File::open(&path).map_err(|e| io_err(&path, e))?;
        let trace = Trace::read_from(std::io::BufReader::new(file))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        let out = series_dir.join(format!("{stem}.csv"));
        fs::write(&out, emit_convergence_plot_data(&trace, plot_stride)).map_err(|e| io_err(&out, e))?;
        summaries.push(RunSummary::from_trace(&stem, &trace, reference)?);
    }
    write_tables(dir, &summaries)?;
    Ok(summaries)
}

#[cfg(test)]
mod tests;
