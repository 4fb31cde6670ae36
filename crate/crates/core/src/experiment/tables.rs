use crate::sim::{record_na, DelayModel, Mode, RunStatus, SimError, Trace, TraceRecord, NA_WINDOW};

use super::ExperimentError;

/// Per-run figures recovered from a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub mode: Mode,
    pub tau: f64,
    pub p: f64,
    pub seed: u64,
    pub delay_lo: f64,
    pub delay_hi: f64,
    pub status: RunStatus,
    pub nu: Vec<usize>,
    pub virtual_time: f64,
    pub objective: f64,
    pub gap: Option<f64>,
    pub na: Vec<f64>,
    pub na_complete: bool,
}

impl RunSummary {
    pub fn from_trace(name: &str, trace: &Trace, reference: Option<f64>) -> Result<Self, ExperimentError> {
        let missing = |what: &str| SimError::Trace { line: 0, message: format!("trace has no {what} record") };
        let (mode, n_regions, _, config) = trace.header().ok_or_else(|| missing("header"))?;
        let Some(TraceRecord::End { t, status, nu, objective }) = trace.end() else {
            return Err(missing("end").into());
        };
        let (delay_lo, delay_hi) = match config.delay {
            DelayModel::Uniform { lo, hi } => (lo, hi),
            DelayModel::Constant { value } => (value, value),
        };
        let (na, na_complete) = record_na(trace, n_regions, NA_WINDOW);
        Ok(Self {
            name: name.to_string(),
            mode,
            tau: config.tau,
            p: config.p,
            seed: config.seed,
            delay_lo,
            delay_hi,
            status: *status,
            nu: nu.clone(),
            virtual_time: *t,
            objective: *objective,
            gap: reference.map(|c| crate::admm::objective_gap(*objective, c)),
            na,
            na_complete,
        })
    }

    pub fn nu_max(&self) -> usize {
        self.nu.iter().copied().max().unwrap_or(0)
    }

    pub fn nu_min(&self) -> usize {
        self.nu.iter().copied().min().unwrap_or(0)
    }

    pub fn nu_mean(&self) -> f64 {
        self.nu.iter().sum::<usize>() as f64 / self.nu.len().max(1) as f64
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV of UTF-8 fields")
}

/// One row per run: iteration counts, gap and virtual time.
pub fn methods_csv(runs: &[RunSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "mode",
        "tau",
        "p",
        "seed",
        "delay_lo_s",
        "delay_hi_s",
        "nu_max",
        "nu_min",
        "nu_mean",
        "gap_pct",
        "virtual_time_s",
        "status",
    ])
    .expect("in-memory write");
    for r in runs {
        w.write_record([
            r.name.clone(),
            r.mode.to_string(),
            r.tau.to_string(),
            r.p.to_string(),
            r.seed.to_string(),
            r.delay_lo.to_string(),
            r.delay_hi.to_string(),
            r.nu_max().to_string(),
            r.nu_min().to_string(),
            format!("{:.2}", r.nu_mean()),
            opt(r.gap.map(|g| (g * 1e4).round() / 1e4)),
            format!("{:.4}", r.virtual_time),
            r.status.to_string(),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

fn delay_groups(runs: &[&RunSummary]) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for r in runs {
        if !groups.contains(&(r.delay_lo, r.delay_hi)) {
            groups.push((r.delay_lo, r.delay_hi));
        }
    }
    groups
}

/// Seed-averaged arrived neighbors of each region (rows) per delay range
/// (columns), over asynchronous runs.
pub fn na_vs_delay_csv(runs: &[RunSummary]) -> String {
    let runs: Vec<&RunSummary> = runs.iter().filter(|r| r.mode == Mode::Async).collect();
    let groups = delay_groups(&runs);
    let n_regions = runs.iter().map(|r| r.na.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["region".to_string()];
    header.extend(groups.iter().map(|(lo, hi)| format!("{lo}-{hi}")));
    w.write_record(&header).expect("in-memory write");
    for k in 0..n_regions {
        let mut row = vec![format!("na_{}", k + 1)];
        for g in &groups {
            let values: Vec<f64> = runs
                .iter()
                .filter(|r| (r.delay_lo, r.delay_hi) == *g)
                .filter_map(|r| r.na.get(k).copied())
                .filter(|v| v.is_finite())
                .collect();
            row.push(if values.is_empty() {
                String::new()
            } else {
                format!("{:.3}", values.iter().sum::<f64>() / values.len() as f64)
            });
        }
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}

/// Mean gap, iterations and virtual time per (mode, delay range, τ).
pub fn gap_vs_tau_csv(runs: &[RunSummary]) -> String {
    let mut keys: Vec<(Mode, f64, f64, f64)> = Vec::new();
    for r in runs {
        let key = (r.mode, r.delay_lo, r.delay_hi, r.tau);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "delay_lo_s", "delay_hi_s", "tau", "runs", "converged", "gap_pct_mean", "nu_mean", "virtual_time_s_mean"])
        .expect("in-memory write");
    for key in keys {
        let group: Vec<&RunSummary> =
            runs.iter().filter(|r| (r.mode, r.delay_lo, r.delay_hi, r.tau) == key).collect();
        let n = group.len() as f64;
        let gaps: Vec<f64> = group.iter().filter_map(|r| r.gap).collect();
        let gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
        w.write_record([
            key.0.to_string(),
            key.1.to_string(),
            key.2.to_string(),
            key.3.to_string(),
            group.len().to_string(),
            group.iter().filter(|r| r.status == RunStatus::Converged).count().to_string(),
            opt(gap.map(|g| (g * 1e4).round() / 1e4)),
            format!("{:.2}", group.iter().map(|r| r.nu_mean()).sum::<f64>() / n),
            format!("{:.4}", group.iter().map(|r| r.virtual_time).sum::<f64>() / n),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub const CONVERGENCE_HEADER: &str = "virtual_time_s,global_nu,max_residue,max_mismatch,objective,status";

/// Convergence series: every `stride`-th commit, then one closing row at the
/// end time carrying the final status.
pub fn emit_convergence_plot_data(trace: &Trace, stride: usize) -> String {
    let stride = stride.max(1);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CONVERGENCE_HEADER.split(',')).expect("in-memory write");
    let mut last: Option<[String; 4]> = None;
    for (i, r) in trace.commits().enumerate() {
        let TraceRecord::Commit { t, global_nu, max_residue, max_mismatch, objective, .. } = r else {
            unreachable!()
        };
        let values = [global_nu.to_string(), opt(*max_residue), opt(*max_mismatch), opt(*objective)];
        if i % stride == 0 {
            let mut row = vec![t.to_string()];
            row.extend(values.iter().cloned());
            row.push(String::new());
            w.write_record(&row).expect("in-memory write");
        }
        last = Some(values);
    }
    if let Some(TraceRecord::End { t, status, .. }) = trace.end() {
        let mut row = vec![t.to_string()];
        row.extend(last.unwrap_or_default());
        row.push(status.to_string());
        w.write_record(&row).expect("in-memory write");
    }
    finish(w)
}
