//! Regional x-update and the centralized reference solve.

mod model;

pub use model::{Coupling, OpfModel};

use crate::case::{build_admittance, AdmittanceMatrix, GridCase};
use crate::nlp::{self, IpmOptions, IpmStatus, Multipliers};
use crate::partition::{build_partition, Region, RegionSpec, DEFAULT_BETA_MINUS, DEFAULT_BETA_PLUS};

pub const LOCAL_TOL: f64 = 1e-6;
pub const CENTRAL_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 200;

/// Scaled primal infeasibility above which an unconverged solve is reported
/// as infeasible rather than merely out of iterations.
const INFEASIBLE_THRESHOLD: f64 = 1e-3;

/// A case with its admittance matrix and the objective scaling shared by
/// every subproblem built on it.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: GridCase,
    pub admittance: AdmittanceMatrix,
    pub cost_scale: f64,
}

impl Network {
    pub fn new(case: GridCase) -> Self {
        let admittance = build_admittance(&case);
        let peak = case
            .active_generators()
            .map(|(_, g)| {
                let p = if g.p_max.is_finite() { g.p_max } else { g.p_min.abs().max(1.0) };
                g.marginal_cost(p).abs()
            })
            .fold(1.0f64, f64::max);
        Self { case, admittance, cost_scale: 1.0 / peak }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    LocalOptimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// Objective of the solved problem (cost plus coupling terms when present).
    pub objective: f64,
    /// Generation cost alone.
    pub cost: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub multipliers: Multipliers,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: LOCAL_TOL, max_iter: MAX_ITER }
    }
}

/// The augmented local OPF of one region.
#[derive(Debug, Clone, Copy)]
pub struct LocalProblem<'a> {
    pub region: &'a Region,
    /// Coupling data; `None` for the uncoupled initialization solve.
    pub coupling: Option<(&'a [f64], &'a [f64], f64)>,
    pub warm_start: Option<&'a [f64]>,
}

impl<'a> LocalProblem<'a> {
    pub fn uncoupled(region: &'a Region) -> Self {
        Self { region, coupling: None, warm_start: None }
    }

    pub fn coupled(region: &'a Region, z: &'a [f64], lambda: &'a [f64], rho: f64) -> Self {
        assert_eq!(z.len(), region.coupling.n_rows(), "z has one entry per coupling row");
        assert_eq!(lambda.len(), region.coupling.n_rows(), "lambda has one entry per coupling row");
        assert!(rho > 0.0, "penalty must be positive");
        Self { region, coupling: Some((z, lambda, rho)), warm_start: None }
    }

    pub fn with_warm_start(mut self, x: &'a [f64]) -> Self {
        self.warm_start = Some(x);
        self
    }

    /// Builds the NLP. Without coupling a region lacking the case reference
    /// has a free rotation, which is pinned at its first interior bus.
    pub fn model(&self, net: &Network) -> OpfModel<'a> {
        let coupling = self.coupling.map(|(z, lambda, rho)| Coupling {
            matrix: &self.region.coupling,
            lambda,
            z,
            rho,
        });
        let anchor = if coupling.is_none() && self.region.reference.is_none() { Some(0) } else { None };
        OpfModel::new(&net.case, &net.admittance, self.region, anchor, coupling, net.cost_scale)
    }
}

fn run(model: &OpfModel<'_>, warm_start: Option<&[f64]>, opts: &SolverOptions) -> SolveReport {
    let mut x0 = match warm_start {
        Some(x) if x.len() == model.dim() => x.to_vec(),
        _ => model.flat_start(),
    };
    model.clip(&mut x0);
    let ipm = IpmOptions { tol: opts.tol, max_iter: opts.max_iter, ..IpmOptions::default() };
    let mut out = nlp::solve(model, &x0, &ipm);
    if out.status != IpmStatus::Converged {
        // restarts, tried only after a failure so successful solves are untouched
        let mut flat = model.flat_start();
        model.clip(&mut flat);
        let ladder = [
            (&flat, ipm.clone()),
            (&flat, IpmOptions { z0: 1e-2, ..ipm.clone() }),
            (&x0, IpmOptions { max_iter: 5 * ipm.max_iter, ..ipm.clone() }),
        ];
        let mut spent = out.iterations;
        for (start, options) in ladder {
            let retry = nlp::solve(model, start, &options);
            spent += retry.iterations;
            let better = retry.status == IpmStatus::Converged || retry.conditions.max() < out.conditions.max();
            if better {
                out = retry;
            }
            if out.status == IpmStatus::Converged {
                break;
            }
        }
        log::debug!("local solve restarted, {spent} iterations in total, {:?}", out.status);
        out.iterations = spent;
    }
    let kkt = nlp::kkt_conditions(model, &out.x, &out.multipliers);
    let status = match out.status {
        IpmStatus::Converged => SolveStatus::LocalOptimal,
        IpmStatus::MaxIter if out.conditions.feasibility <= INFEASIBLE_THRESHOLD => SolveStatus::MaxIter,
        IpmStatus::MaxIter | IpmStatus::NumericalFailure => SolveStatus::Infeasible,
    };
    if status == SolveStatus::MaxIter {
        log::warn!("local solve stopped after {} iterations, KKT residual {:.3e}", out.iterations, kkt.max());
    }
    SolveReport {
        objective: model.augmented_objective(&out.x),
        cost: model.generation_cost(&out.x),
        kkt_residual: kkt.max(),
        iterations: out.iterations,
        status,
        multipliers: out.multipliers,
        x: out.x,
    }
}

/// Solves one region's x-update from its warm start (or a flat start).
pub fn solve_local(net: &Network, problem: &LocalProblem<'_>, opts: &SolverOptions) -> SolveReport {
    let model = problem.model(net);
    run(&model, problem.warm_start, opts)
}

/// Scaled KKT residual of `problem` at `(x, multipliers)`.
pub fn kkt_residual(net: &Network, problem: &LocalProblem<'_>, x: &[f64], multipliers: &Multipliers) -> f64 {
    nlp::kkt_conditions(&problem.model(net), x, multipliers).max()
}

/// The whole grid as one region, with the reference angle fixed.
pub fn whole_grid(case: &GridCase) -> Region {
    build_partition(case, &RegionSpec::single(case), DEFAULT_BETA_MINUS, DEFAULT_BETA_PLUS)
        .expect("single-region partition of a valid case")
        .regions
        .remove(0)
}

/// Centralized AC OPF, the reference for optimality gaps.
pub fn solve_centralized(net: &Network, opts: &SolverOptions) -> SolveReport {
    let region = whole_grid(&net.case);
    let capacity: f64 = net.case.active_generators().map(|(_, g)| g.p_max).sum();
    let model = LocalProblem::uncoupled(&region).model(net);
    if capacity < net.case.total_load() {
        let x = model.flat_start();
        return SolveReport {
            objective: model.augmented_objective(&x),
            cost: model.generation_cost(&x),
            kkt_residual: f64::INFINITY,
            iterations: 0,
            status: SolveStatus::Infeasible,
            multipliers: Multipliers::default(),
            x,
        };
    }
    run(&model, None, opts)
}

/// Centralized solve at the default reference tolerance.
pub fn solve_centralized_case(case: &GridCase, tol: f64) -> SolveReport {
    solve_centralized(&Network::new(case.clone()), &SolverOptions { tol, max_iter: MAX_ITER })
}

#[cfg(test)]
mod tests;
