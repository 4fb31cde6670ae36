//! Consensus ADMM updates for one region: closed-form consensus step,
//! projected multiplier step, adaptive penalty, residue and stopping rule.

mod sync;

pub use sync::{run_synchronous, SyncOptions, SyncRun};

use serde::{Deserialize, Serialize};

use crate::opf::{solve_local, LocalProblem, Network, SolveStatus, SolverOptions};
use crate::partition::{Partition, Region, SlotKind};

pub const DEFAULT_RHO0: f64 = 85000.0;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_TAU: f64 = 1.1;
pub const DEFAULT_LAMBDA_BOUND: f64 = 1e7;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmParams {
    pub rho0: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            rho0: DEFAULT_RHO0,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            lambda_min: -DEFAULT_LAMBDA_BOUND,
            lambda_max: DEFAULT_LAMBDA_BOUND,
        }
    }
}

impl AdmmParams {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let bad = |m: &str| Err(AdmmError::BadParams(m.to_string()));
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return bad("rho0 must be positive and finite");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 1.0 && self.tau.is_finite()) {
            return bad("tau must exceed 1");
        }
        if !(self.lambda_min <= 0.0 && self.lambda_max >= 0.0) {
            return bad("lambda box must contain 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdmmError {
    #[error("z-update needs at least one arrived neighbor")]
    NoArrivals,
    #[error("region {region} has no neighbor {neighbor}")]
    NotANeighbor { region: usize, neighbor: usize },
    #[error("no message from neighbor {neighbor} of region {region}")]
    MissingMessage { region: usize, neighbor: usize },
    #[error("local solve of region {region} failed at iteration {nu} ({status:?})")]
    LocalSolve { region: usize, nu: usize, status: SolveStatus },
    #[error("invalid ADMM parameters: {0}")]
    BadParams(String),
}

/// Everything region `k` owns between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: Vec<f64>,
    /// Cached `A_k x_k`.
    pub ax: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rho: f64,
    pub rho_tilde: f64,
    /// `‖A_k x_k − z_k‖∞` from the latest update.
    pub residue: f64,
    pub nu: usize,
    /// Generation cost of the region's own units at `x`.
    pub cost: f64,
    pub solver_iterations: usize,
}

/// What region `k` transmits to one neighbor: entries restricted to the rows
/// the two regions share, in slot order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborMessage {
    pub sender: usize,
    pub stamp: usize,
    pub ax: Vec<f64>,
    pub lambda: Vec<f64>,
    pub rho_tilde: f64,
}

impl NeighborMessage {
    pub fn new(sender: &Region, state: &AdmmState, receiver: usize) -> Result<Self, AdmmError> {
        let pos = sender
            .neighbor_position(receiver)
            .ok_or(AdmmError::NotANeighbor { region: sender.index, neighbor: receiver })?;
        let rows = sender.shared_rows(pos);
        Ok(Self {
            sender: sender.index,
            stamp: state.nu,
            ax: rows.iter().map(|&r| state.ax[r]).collect(),
            lambda: rows.iter().map(|&r| state.lambda[r]).collect(),
            rho_tilde: state.rho_tilde,
        })
    }
}

/// Latest message held from each neighbor, indexed like `Region::neighbors`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborView {
    pub latest: Vec<Option<NeighborMessage>>,
}

impl NeighborView {
    pub fn empty(region: &Region) -> Self {
        Self { latest: vec![None; region.neighbors.len()] }
    }

    /// Stores `msg` unless an equal-or-newer stamp is already held. Returns
    /// whether it was stored.
    pub fn offer(&mut self, pos: usize, msg: NeighborMessage) -> bool {
        match &self.latest[pos] {
            Some(held) if held.stamp > msg.stamp => false,
            _ => {
                self.latest[pos] = Some(msg);
                true
            }
        }
    }

    pub fn max_rho_tilde(&self) -> Option<f64> {
        self.latest.iter().flatten().map(|m| m.rho_tilde).reduce(f64::max)
    }
}

/// The consensus value of one slot in the frame of region `k`.
///
/// `a_k`, `a_l` are the two regions' coupling-row values for the slot. For a
/// difference slot each region measures its own endpoint minus the other, so
/// the neighbor's contribution enters with opposite sign.
#[allow(clippy::too_many_arguments)]
pub fn consensus_value(kind: SlotKind, lambda_k: f64, lambda_l: f64, rho_k: f64, rho_l: f64, a_k: f64, a_l: f64) -> f64 {
    let s = match kind {
        SlotKind::Plus => 1.0,
        SlotKind::Minus => -1.0,
    };
    (lambda_k + s * lambda_l + rho_k * a_k + s * rho_l * a_l) / (rho_k + rho_l)
}

/// Recomputes the slots shared with the `arrived` neighbors (positions into
/// `region.neighbors`); every other slot is left untouched.
pub fn update_z(region: &Region, state: &mut AdmmState, view: &NeighborView, arrived: &[usize]) -> Result<(), AdmmError> {
    if arrived.is_empty() {
        return Err(AdmmError::NoArrivals);
    }
    for &pos in arrived {
        let msg = view.latest.get(pos).and_then(Option::as_ref).ok_or(AdmmError::MissingMessage {
            region: region.index,
            neighbor: region.neighbors.get(pos).copied().unwrap_or(usize::MAX),
        })?;
        for (i, &r) in region.shared_rows(pos).iter().enumerate() {
            let kind = region.coupling.rows()[r].kind;
            state.z[r] =
                consensus_value(kind, state.lambda[r], msg.lambda[i], state.rho, msg.rho_tilde, state.ax[r], msg.ax[i]);
        }
    }
    Ok(())
}

/// `λ ← clamp(λ + ρ (A x − z))`.
pub fn update_lambda(state: &mut AdmmState, params: &AdmmParams) {
    for ((l, &a), &z) in state.lambda.iter_mut().zip(&state.ax).zip(&state.z) {
        *l = (*l + state.rho * (a - z)).clamp(params.lambda_min, params.lambda_max);
    }
}

/// Candidate penalty: keep `rho` when the residue shrank by at least `gamma`,
/// otherwise multiply by `tau`.
pub fn penalty_candidate(rho: f64, residue: f64, previous: f64, gamma: f64, tau: f64) -> f64 {
    if residue <= gamma * previous {
        rho
    } else {
        tau * rho
    }
}

/// Largest candidate penalty in the neighborhood.
pub fn neighborhood_penalty(own: f64, neighbors: impl IntoIterator<Item = f64>) -> f64 {
    neighbors.into_iter().fold(own, f64::max)
}

/// Sets `ρ̃` from the new residue against the previous one, then `ρ` from
/// the neighborhood maximum over the latest values in `view`.
pub fn update_rho(state: &mut AdmmState, view: &NeighborView, residue: f64, params: &AdmmParams) -> (f64, f64) {
    state.rho_tilde = penalty_candidate(state.rho, residue, state.residue, params.gamma, params.tau);
    state.residue = residue;
    state.rho = neighborhood_penalty(state.rho_tilde, view.max_rho_tilde());
    (state.rho_tilde, state.rho)
}

/// `‖ax − z‖∞`; zero for a region without coupling rows.
pub fn primal_residue(ax: &[f64], z: &[f64]) -> f64 {
    ax.iter().zip(z).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
}

/// Largest disagreement between the two copies of any tie-line endpoint
/// voltage, over both endpoints and both rectangular components.
pub fn voltage_mismatch(partition: &Partition, xs: &[&[f64]]) -> f64 {
    let mut worst = 0.0f64;
    for tie in &partition.layout.ties {
        let (ra, rb) = (&partition.regions[tie.from_region], &partition.regions[tie.to_region]);
        let (xa, xb) = (xs[tie.from_region], xs[tie.to_region]);
        let (na, nb) = (ra.n_local_buses(), rb.n_local_buses());
        for bus in [tie.from_bus, tie.to_bus] {
            let ia = ra.local_index(bus).expect("tie endpoint is local to both regions");
            let ib = rb.local_index(bus).expect("tie endpoint is local to both regions");
            worst = worst.max((xa[ia] - xb[ib]).abs()).max((xa[na + ia] - xb[nb + ib]).abs());
        }
    }
    worst
}

/// Both the largest residue and the largest mismatch are within `epsilon`.
pub fn check_stop(max_residue: f64, max_mismatch: f64, epsilon: f64) -> bool {
    max_residue <= epsilon && max_mismatch <= epsilon
}

/// `(max residue, max mismatch)` over all regions.
pub fn stop_measures(partition: &Partition, states: &[&AdmmState]) -> (f64, f64) {
    let residue = states.iter().map(|s| s.residue).fold(0.0, f64::max);
    let xs: Vec<&[f64]> = states.iter().map(|s| s.x.as_slice()).collect();
    (residue, voltage_mismatch(partition, &xs))
}

pub fn stop_condition(partition: &Partition, states: &[&AdmmState], epsilon: f64) -> bool {
    let (r, m) = stop_measures(partition, states);
    check_stop(r, m, epsilon)
}

/// Relative objective error in percent.
pub fn objective_gap(distributed: f64, centralized: f64) -> f64 {
    100.0 * (distributed - centralized) / centralized
}

fn check_solve(region: &Region, nu: usize, status: SolveStatus) -> Result<(), AdmmError> {
    match status {
        SolveStatus::Infeasible => Err(AdmmError::LocalSolve { region: region.index, nu, status }),
        SolveStatus::MaxIter => {
            log::warn!("region {} iteration {nu}: local solve hit the iteration limit", region.index);
            Ok(())
        }
        SolveStatus::LocalOptimal => Ok(()),
    }
}

/// The uncoupled local solve that starts every region.
pub fn initialize(net: &Network, region: &Region, params: &AdmmParams, opts: &SolverOptions) -> Result<AdmmState, AdmmError> {
    let report = solve_local(net, &LocalProblem::uncoupled(region), opts);
    check_solve(region, 0, report.status)?;
    let ax = region.coupling_image(&report.x);
    let rows = ax.len();
    Ok(AdmmState {
        z: ax.clone(),
        ax,
        lambda: vec![0.0; rows],
        rho: params.rho0,
        rho_tilde: params.rho0,
        residue: if rows == 0 { 0.0 } else { f64::INFINITY },
        nu: 0,
        cost: report.cost,
        solver_iterations: report.iterations,
        x: report.x,
    })
}

/// One local update of region `k` using the neighbors in `arrived`.
pub fn local_step(
    net: &Network,
    region: &Region,
    state: &AdmmState,
    view: &NeighborView,
    arrived: &[usize],
    params: &AdmmParams,
    opts: &SolverOptions,
) -> Result<AdmmState, AdmmError> {
    let mut next = state.clone();
    next.nu += 1;
    next.rho = neighborhood_penalty(next.rho_tilde, view.max_rho_tilde());
    update_z(region, &mut next, view, arrived)?;

    let problem = LocalProblem::coupled(region, &next.z, &next.lambda, next.rho).with_warm_start(&state.x);
    let report = solve_local(net, &problem, opts);
    check_solve(region, next.nu, report.status)?;
    next.ax = region.coupling_image(&report.x);
    next.x = report.x;
    next.cost = report.cost;
    next.solver_iterations = report.iterations;

    let residue = primal_residue(&next.ax, &next.z);
    update_lambda(&mut next, params);
    next.rho_tilde = penalty_candidate(next.rho, residue, next.residue, params.gamma, params.tau);
    next.residue = residue;
    Ok(next)
}
