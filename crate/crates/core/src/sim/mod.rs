//! Discrete-event execution of synchronous and asynchronous ADMM in virtual
//! time.
//!
//! Each region alternates between computing and waiting. A computation is
//! evaluated from the region's state when it starts and becomes visible, and
//! is broadcast, when it finishes. Messages travel with a sampled link delay.
//! Simultaneous events are ordered by (kind, region, sequence), with
//! arrivals before completions, so a run is a pure function of its inputs.

mod config;
mod trace;

pub use config::{ComputeModel, DelayModel, DelaySampling, SimConfig};
pub use trace::{record_na, virtual_clock_snapshot, RegionSnapshot, Snapshot, Trace, TraceRecord};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmError, AdmmState, NeighborMessage, NeighborView};
use crate::exec::Executor;
use crate::opf::Network;
use crate::partition::Partition;

/// Number of leading updates over which arrived neighbors are averaged.
pub const NA_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("I/O: {0}")]
    Io(String),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("snapshot time {0} is out of range")]
    TimeOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sync,
    Async,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sync" => Ok(Mode::Sync),
            "async" => Ok(Mode::Async),
            other => Err(format!("unknown mode `{other}` (expected sync or async)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxedOut,
    Failed,
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxedOut => "maxed_out",
            RunStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    /// Local iteration count of each region.
    pub nu: Vec<usize>,
    /// Virtual time at which the run ended.
    pub time: f64,
    /// Total generation cost of the last committed iterate.
    pub objective: f64,
    /// Percent gap against a centralized reference, once one is attached.
    pub gap: Option<f64>,
    pub na: Vec<f64>,
    /// False when some region made fewer than [`NA_WINDOW`] updates.
    pub na_complete: bool,
    pub max_residue: f64,
    pub max_mismatch: f64,
    pub states: Vec<AdmmState>,
    /// Every committed state per region, initialization first, when
    /// `record_iterates` is set.
    pub iterates: Option<Vec<Vec<AdmmState>>>,
    pub trace: Trace,
}

impl RunResult {
    pub fn nu_max(&self) -> usize {
        self.nu.iter().copied().max().unwrap_or(0)
    }

    pub fn nu_min(&self) -> usize {
        self.nu.iter().copied().min().unwrap_or(0)
    }

    pub fn nu_mean(&self) -> f64 {
        if self.nu.is_empty() {
            return 0.0;
        }
        self.nu.iter().sum::<usize>() as f64 / self.nu.len() as f64
    }

    pub fn with_reference(mut self, centralized: f64) -> Self {
        self.gap = Some(admm::objective_gap(self.objective, centralized));
        self
    }
}

/// Minimum number of fresh neighbors before an update, `max(1, ⌈p·n⌉)`.
/// Products within rounding of an integer count as that integer, so that
/// e.g. `0.7 · 10` gives 7.
pub fn arrival_threshold(p: f64, n_neighbors: usize) -> usize {
    let x = p * n_neighbors as f64;
    let nearest = x.round();
    let ceil = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { x.ceil() };
    (ceil as usize).max(1)
}

/// Whether `fresh` distinct arrived neighbors open the gate.
pub fn arrival_gate(fresh: usize, n_neighbors: usize, p: f64) -> bool {
    fresh >= arrival_threshold(p, n_neighbors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival { from: usize, msg: usize },
    ComputeDone,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    region: usize,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn rank(&self) -> u8 {
        match self.kind {
            EventKind::Arrival { .. } => 0,
            EventKind::ComputeDone => 1,
        }
    }

    fn key(&self) -> (f64, u8, usize, u64) {
        (self.time, self.rank(), self.region, self.seq)
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        // reversed: BinaryHeap is a max-heap
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)).then(b.3.cmp(&a.3))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Computing,
    Waiting,
    Done,
}

struct Job {
    region: usize,
    /// `None` for the initialization solve.
    input: Option<(NeighborView, Vec<usize>)>,
}

struct Actor {
    state: Option<AdmmState>,
    pending: Option<Result<AdmmState, AdmmError>>,
    activity: Activity,
    view: NeighborView,
    fresh: Vec<bool>,
    queues: Vec<VecDeque<NeighborMessage>>,
}

struct Sampler {
    link_delay: Vec<Vec<f64>>,
    message_rng: ChaCha8Rng,
    compute_rng: ChaCha8Rng,
}

impl Sampler {
    fn new(config: &SimConfig, partition: &Partition) -> Self {
        let stream = |n: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(n);
            rng
        };
        let mut link_rng = stream(1);
        let k = partition.n_regions();
        let mut link_delay = vec![vec![0.0; k]; k];
        for a in 0..k {
            for &b in &partition.regions[a].neighbors {
                if b > a {
                    let d = draw_delay(&config.delay, &mut link_rng);
                    link_delay[a][b] = d;
                    link_delay[b][a] = d;
                }
            }
        }
        Self { link_delay, message_rng: stream(2), compute_rng: stream(3) }
    }

    fn delay(&mut self, config: &SimConfig, from: usize, to: usize) -> f64 {
        match config.delay_sampling {
            DelaySampling::Link => self.link_delay[from][to],
            DelaySampling::Message => draw_delay(&config.delay, &mut self.message_rng),
        }
    }

    fn compute(&mut self, config: &SimConfig, region: usize) -> f64 {
        match &config.compute {
            ComputeModel::Constant { seconds } => *seconds,
            ComputeModel::PerRegion { seconds } => seconds[region],
            ComputeModel::Lognormal { mean, sigma } => {
                let mu = mean.ln() - 0.5 * sigma * sigma;
                LogNormal::new(mu, *sigma).expect("validated").sample(&mut self.compute_rng)
            }
        }
    }
}

fn draw_delay(model: &DelayModel, rng: &mut ChaCha8Rng) -> f64 {
    match *model {
        DelayModel::Uniform { lo, hi } if hi > lo => rng.random_range(lo..=hi),
        DelayModel::Uniform { lo, .. } => lo,
        DelayModel::Constant { value } => value,
    }
}

struct Engine<'a> {
    net: &'a Network,
    partition: &'a Partition,
    config: &'a SimConfig,
    mode: Mode,
    executor: Executor,
    actors: Vec<Actor>,
    queue: BinaryHeap<Event>,
    messages: Vec<Option<(NeighborMessage, f64)>>,
    jobs: Vec<Job>,
    seq: u64,
    sampler: Sampler,
    trace: Trace,
    iterates: Option<Vec<Vec<AdmmState>>>,
    now: f64,
}

/// Runs ADMM on the partitioned network until the stopping rule holds on a
/// snapshot, a limit is hit, or a local solve fails.
pub fn run(net: &Network, partition: &Partition, config: &SimConfig, mode: Mode) -> Result<RunResult, SimError> {
    run_with(net, partition, config, mode, Executor::default())
}

/// [`run`] with an explicit executor for batches of simultaneous solves.
pub fn run_with(
    net: &Network,
    partition: &Partition,
    config: &SimConfig,
    mode: Mode,
    executor: Executor,
) -> Result<RunResult, SimError> {
    config.validate(partition.n_regions())?;
    let k = partition.n_regions();
    let actors = partition
        .regions
        .iter()
        .map(|r| Actor {
            state: None,
            pending: None,
            activity: Activity::Computing,
            view: NeighborView::empty(r),
            fresh: vec![false; r.neighbors.len()],
            queues: vec![VecDeque::new(); r.neighbors.len()],
        })
        .collect();
    let mut engine = Engine {
        net,
        partition,
        config,
        mode,
        executor,
        actors,
        queue: BinaryHeap::new(),
        messages: Vec::new(),
        jobs: Vec::new(),
        seq: 0,
        sampler: Sampler::new(config, partition),
        trace: Trace::default(),
        iterates: config.record_iterates.then(|| vec![Vec::new(); k]),
        now: 0.0,
    };
    engine.trace.push(TraceRecord::Header {
        mode,
        n_regions: k,
        neighbors: partition.regions.iter().map(|r| r.neighbors.clone()).collect(),
        config: config.clone(),
    });
    for region in 0..k {
        let duration = engine.sampler.compute(config, region);
        engine.jobs.push(Job { region, input: None });
        engine.schedule(duration, region, EventKind::ComputeDone);
    }
    Ok(engine.event_loop())
}

impl Engine<'_> {
    fn schedule(&mut self, delay: f64, region: usize, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { time: self.now + delay, region, seq: self.seq, kind });
    }

    /// Evaluates every started computation; results stay pending until their
    /// completion events.
    fn flush_jobs(&mut self) {
        if self.jobs.is_empty() {
            return;
        }
        let jobs = std::mem::take(&mut self.jobs);
        let params = self.config.admm_params();
        let opts = self.config.solver_options();
        let results = self.executor.map(&jobs, |job| {
            let region = &self.partition.regions[job.region];
            match &job.input {
                None => admm::initialize(self.net, region, &params, &opts),
                Some((view, arrived)) => {
                    let state = self.actors[job.region].state.as_ref().expect("updates follow initialization");
                    admm::local_step(self.net, region, state, view, arrived, &params, &opts)
                }
            }
        });
        for (job, result) in jobs.iter().zip(results) {
            self.actors[job.region].pending = Some(result);
        }
    }

    fn event_loop(mut self) -> RunResult {
        let mut status = RunStatus::MaxedOut;
        let mut diagnostic = None;
        while let Some(event) = self.queue.pop() {
            if event.time > self.config.max_time {
                self.now = self.config.max_time;
                diagnostic = Some(format!("virtual time limit {} s reached", self.config.max_time));
                break;
            }
            self.now = event.time;
            match event.kind {
                EventKind::Arrival { from, msg } => self.on_arrival(event.region, from, msg),
                EventKind::ComputeDone => {
                    if self.actors[event.region].pending.is_none() {
                        self.flush_jobs();
                    }
                    if let Err(e) = self.on_compute_done(event.region) {
                        status = RunStatus::Failed;
                        diagnostic = Some(e.to_string());
                        break;
                    }
                    if self.stopped() {
                        status = RunStatus::Converged;
                        break;
                    }
                }
            }
        }
        if status == RunStatus::MaxedOut && diagnostic.is_none() {
            diagnostic = Some(format!("iteration limit {} reached", self.config.max_iterations));
        }
        self.finish(status, diagnostic)
    }

    fn committed(&self) -> Option<Vec<&AdmmState>> {
        self.actors.iter().map(|a| a.state.as_ref()).collect()
    }

    fn stopped(&self) -> bool {
        match self.committed() {
            Some(states) => admm::stop_condition(self.partition, &states, self.config.epsilon),
            None => false,
        }
    }

    fn on_arrival(&mut self, to: usize, from: usize, msg: usize) {
        let (message, sent) = self.messages[msg].take().expect("each message arrives once");
        let pos = self.partition.regions[to].neighbor_position(from).expect("messages travel along ties");
        let stamp = message.stamp;
        let accepted = match self.mode {
            Mode::Async => {
                let actor = &mut self.actors[to];
                let stored = actor.view.offer(pos, message);
                if stored {
                    actor.fresh[pos] = true;
                }
                stored
            }
            Mode::Sync => {
                self.actors[to].queues[pos].push_back(message);
                true
            }
        };
        self.trace.push(TraceRecord::Arrive {
            t: self.now,
            sent,
            from,
            to,
            stamp,
            accepted,
        });
        if self.actors[to].activity == Activity::Waiting {
            self.try_start(to);
        }
    }

    fn on_compute_done(&mut self, k: usize) -> Result<(), AdmmError> {
        let result = self.actors[k].pending.take().expect("flushed before completion");
        let state = match result {
            Ok(state) => state,
            Err(e) => {
                let nu = self.actors[k].state.as_ref().map_or(0, |s| s.nu + 1);
                self.trace.push(TraceRecord::Fail { t: self.now, region: k, nu, message: e.to_string() });
                return Err(e);
            }
        };
        let region = &self.partition.regions[k];
        for &l in &region.neighbors {
            let msg = NeighborMessage::new(region, &state, l)?;
            self.messages.push(Some((msg, self.now)));
            let id = self.messages.len() - 1;
            let delay = self.sampler.delay(self.config, k, l);
            self.schedule(delay, l, EventKind::Arrival { from: k, msg: id });
        }
        if let Some(it) = &mut self.iterates {
            it[k].push(state.clone());
        }
        let done = state.nu >= self.config.max_iterations || region.neighbors.is_empty();
        self.actors[k].state = Some(state);
        self.actors[k].activity = if done { Activity::Done } else { Activity::Waiting };
        self.record_commit(k);
        if !done {
            self.try_start(k);
        }
        Ok(())
    }

    fn record_commit(&mut self, k: usize) {
        let state = self.actors[k].state.as_ref().expect("just committed");
        let finite = |v: f64| v.is_finite().then_some(v);
        let (max_residue, max_mismatch, objective) = match self.committed() {
            Some(states) => {
                let (r, m) = admm::stop_measures(self.partition, &states);
                (finite(r), Some(m), states.iter().map(|s| s.cost).sum())
            }
            None => (None, None, f64::NAN),
        };
        let global_nu = self.actors.iter().filter_map(|a| a.state.as_ref()).map(|s| s.nu).sum();
        let record = TraceRecord::Commit {
            t: self.now,
            region: k,
            nu: state.nu,
            rho: state.rho,
            rho_tilde: state.rho_tilde,
            residue: finite(state.residue),
            cost: state.cost,
            global_nu,
            max_residue,
            max_mismatch,
            objective: finite(objective),
        };
        self.trace.push(record);
    }

    fn try_start(&mut self, k: usize) {
        let nu = self.actors[k].state.as_ref().expect("waiting regions are initialized").nu;
        let n = self.partition.regions[k].neighbors.len();
        let arrived: Vec<usize> = match self.mode {
            Mode::Async => {
                let fresh: Vec<usize> = (0..n).filter(|&i| self.actors[k].fresh[i]).collect();
                if !arrival_gate(fresh.len(), n, self.config.p) {
                    return;
                }
                fresh
            }
            Mode::Sync => {
                let actor = &mut self.actors[k];
                if !actor.queues.iter().all(|q| q.front().is_some_and(|m| m.stamp == nu)) {
                    return;
                }
                for (pos, q) in actor.queues.iter_mut().enumerate() {
                    let msg = q.pop_front().expect("checked above");
                    actor.view.latest[pos] = Some(msg);
                }
                (0..n).collect()
            }
        };
        let actor = &mut self.actors[k];
        actor.fresh.iter_mut().for_each(|f| *f = false);
        actor.activity = Activity::Computing;
        let view = actor.view.clone();
        let duration = self.sampler.compute(self.config, k);
        let neighbors = &self.partition.regions[k].neighbors;
        self.trace.push(TraceRecord::Start {
            t: self.now,
            region: k,
            nu: nu + 1,
            arrived: arrived.iter().map(|&i| neighbors[i]).collect(),
            duration,
        });
        self.jobs.push(Job { region: k, input: Some((view, arrived)) });
        self.schedule(duration, k, EventKind::ComputeDone);
    }

    fn finish(mut self, status: RunStatus, diagnostic: Option<String>) -> RunResult {
        let states: Vec<AdmmState> = self.actors.iter().filter_map(|a| a.state.clone()).collect();
        let nu: Vec<usize> = self.actors.iter().map(|a| a.state.as_ref().map_or(0, |s| s.nu)).collect();
        let objective = states.iter().map(|s| s.cost).sum();
        let (max_residue, max_mismatch) = if states.len() == self.actors.len() {
            admm::stop_measures(self.partition, &states.iter().collect::<Vec<_>>())
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        self.trace.push(TraceRecord::End { t: self.now, status, nu: nu.clone(), objective });
        let (na, na_complete) = record_na(&self.trace, self.actors.len(), NA_WINDOW);
        RunResult {
            mode: self.mode,
            status,
            diagnostic: if status == RunStatus::Converged { None } else { diagnostic },
            nu,
            time: self.now,
            objective,
            gap: None,
            na,
            na_complete,
            max_residue,
            max_mismatch,
            states,
            iterates: self.iterates,
            trace: self.trace,
        }
    }
}
