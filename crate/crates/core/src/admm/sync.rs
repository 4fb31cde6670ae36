//! Lockstep ADMM without any notion of time: every region updates once per
//! round using every neighbor's result from the previous round.

use super::{initialize, local_step, stop_measures, check_stop, AdmmError, AdmmParams, AdmmState, NeighborMessage, NeighborView};
use crate::exec::Executor;
use crate::opf::{Network, SolverOptions};
use crate::partition::Partition;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncOptions {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub solver: SolverOptions,
    pub executor: Executor,
    /// Keep every round's states in [`SyncRun::history`].
    pub record_history: bool,
}

impl Default for SyncOptions {
    fn default() -> Self {
        Self {
            epsilon: super::DEFAULT_EPSILON,
            max_iterations: 500,
            solver: SolverOptions::default(),
            executor: Executor::default(),
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncRun {
    pub converged: bool,
    pub iterations: usize,
    pub states: Vec<AdmmState>,
    /// Total generation cost of the final iterate.
    pub objective: f64,
    pub max_residue: f64,
    pub max_mismatch: f64,
    /// `history[n][k]`: state of region `k` after round `n` (round 0 is the
    /// initialization). Empty unless requested.
    pub history: Vec<Vec<AdmmState>>,
}

fn views(partition: &Partition, states: &[AdmmState]) -> Result<Vec<NeighborView>, AdmmError> {
    partition
        .regions
        .iter()
        .map(|region| {
            let latest = region
                .neighbors
                .iter()
                .map(|&l| NeighborMessage::new(&partition.regions[l], &states[l], region.index).map(Some))
                .collect::<Result<_, _>>()?;
            Ok(NeighborView { latest })
        })
        .collect()
}

pub fn run_synchronous(
    net: &Network,
    partition: &Partition,
    params: &AdmmParams,
    opts: &SyncOptions,
) -> Result<SyncRun, AdmmError> {
    params.validate()?;
    let mut states: Vec<AdmmState> = opts
        .executor
        .map(&partition.regions, |r| initialize(net, r, params, &opts.solver))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut history = Vec::new();
    if opts.record_history {
        history.push(states.clone());
    }
    let mut iterations = 0;
    let measure = |states: &[AdmmState]| stop_measures(partition, &states.iter().collect::<Vec<_>>());
    let (mut max_residue, mut max_mismatch) = measure(&states);
    let mut converged = check_stop(max_residue, max_mismatch, opts.epsilon);

    while !converged && iterations < opts.max_iterations {
        let views = views(partition, &states)?;
        let work: Vec<usize> = (0..partition.n_regions()).collect();
        states = opts
            .executor
            .map(&work, |&k| {
                let region = &partition.regions[k];
                if region.neighbors.is_empty() {
                    return Ok(states[k].clone());
                }
                let arrived: Vec<usize> = (0..region.neighbors.len()).collect();
                local_step(net, region, &states[k], &views[k], &arrived, params, &opts.solver)
            })
            .into_iter()
            .collect::<Result<_, _>>()?;
        iterations += 1;
        if opts.record_history {
            history.push(states.clone());
        }
        (max_residue, max_mismatch) = measure(&states);
        converged = check_stop(max_residue, max_mismatch, opts.epsilon);
        log::debug!("round {iterations}: residue {max_residue:.3e}, mismatch {max_mismatch:.3e}");
    }
    Ok(SyncRun {
        converged,
        iterations,
        objective: states.iter().map(|s| s.cost).sum(),
        max_residue,
        max_mismatch,
        states,
        history,
    })
}
