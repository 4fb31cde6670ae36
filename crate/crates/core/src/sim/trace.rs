//! Newline-delimited JSON event log of a run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Mode, RunStatus, SimConfig, SimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        mode: Mode,
        n_regions: usize,
        neighbors: Vec<Vec<usize>>,
        config: SimConfig,
    },
    /// A region begins a local update using the listed neighbors.
    Start {
        t: f64,
        region: usize,
        nu: usize,
        arrived: Vec<usize>,
        duration: f64,
    },
    /// A region's update becomes visible; the `max_*` and `objective` fields
    /// describe the whole system right after it.
    Commit {
        t: f64,
        region: usize,
        nu: usize,
        rho: f64,
        rho_tilde: f64,
        /// `None` until the region's first coupled update.
        residue: Option<f64>,
        cost: f64,
        global_nu: usize,
        max_residue: Option<f64>,
        /// `None` until every region has finished initializing.
        max_mismatch: Option<f64>,
        objective: Option<f64>,
    },
    Arrive {
        t: f64,
        sent: f64,
        from: usize,
        to: usize,
        stamp: usize,
        /// False when a newer message from the same sender was already held.
        accepted: bool,
    },
    Fail {
        t: f64,
        region: usize,
        nu: usize,
        message: String,
    },
    End {
        t: f64,
        status: RunStatus,
        nu: Vec<usize>,
        objective: f64,
    },
}

impl TraceRecord {
    pub fn time(&self) -> f64 {
        match self {
            TraceRecord::Header { .. } => 0.0,
            TraceRecord::Start { t, .. }
            | TraceRecord::Commit { t, .. }
            | TraceRecord::Arrive { t, .. }
            | TraceRecord::Fail { t, .. }
            | TraceRecord::End { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), SimError> {
        for record in &self.records {
            serde_json::to_writer(&mut w, record).map_err(|e| SimError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| SimError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("JSON is UTF-8")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, SimError> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| SimError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| SimError::Trace { line: i + 1, message: e.to_string() })?;
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn header(&self) -> Option<(Mode, usize, &[Vec<usize>], &SimConfig)> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Header { mode, n_regions, neighbors, config } => {
                Some((*mode, *n_regions, neighbors.as_slice(), config))
            }
            _ => None,
        })
    }

    pub fn end(&self) -> Option<&TraceRecord> {
        self.records.iter().rev().find(|r| matches!(r, TraceRecord::End { .. }))
    }

    pub fn commits(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Commit { .. }))
    }
}

/// Average number of arrived neighbors per region over its first `window`
/// updates, and whether every region actually reached `window` updates.
pub fn record_na(trace: &Trace, n_regions: usize, window: usize) -> (Vec<f64>, bool) {
    let mut sums = vec![0usize; n_regions];
    let mut counts = vec![0usize; n_regions];
    for r in &trace.records {
        if let TraceRecord::Start { region, nu, arrived, .. } = r {
            if *nu >= 1 && *nu <= window {
                sums[*region] += arrived.len();
                counts[*region] += 1;
            }
        }
    }
    let complete = counts.iter().all(|&c| c >= window);
    let na = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { f64::NAN } else { s as f64 / c as f64 })
        .collect();
    (na, complete)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSnapshot {
    pub nu: usize,
    pub residue: Option<f64>,
    pub cost: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub regions: Vec<RegionSnapshot>,
    /// `Σ_k ν_k`.
    pub global_nu: usize,
    pub max_residue: Option<f64>,
    pub max_mismatch: Option<f64>,
    pub objective: Option<f64>,
}

/// Last committed state of every region at virtual time `t`.
pub fn virtual_clock_snapshot(trace: &Trace, t: f64) -> Result<Snapshot, SimError> {
    if !(t >= 0.0) {
        return Err(SimError::TimeOutOfRange(t));
    }
    let n = trace.header().map(|h| h.1).ok_or(SimError::Trace { line: 1, message: "missing header".into() })?;
    let mut snap = Snapshot {
        t,
        regions: vec![RegionSnapshot { nu: 0, residue: None, cost: None, rho: None }; n],
        global_nu: 0,
        max_residue: None,
        max_mismatch: None,
        objective: None,
    };
    for r in trace.commits() {
        let TraceRecord::Commit { t: tc, region, nu, rho, residue, cost, max_residue, max_mismatch, objective, .. } = r
        else {
            unreachable!()
        };
        if *tc > t {
            break;
        }
        snap.regions[*region] = RegionSnapshot { nu: *nu, residue: *residue, cost: Some(*cost), rho: Some(*rho) };
        snap.max_residue = *max_residue;
        snap.max_mismatch = *max_mismatch;
        snap.objective = *objective;
    }
    snap.global_nu = snap.regions.iter().map(|r| r.nu).sum();
    Ok(snap)
}
