//! Primal-dual interior-point method for smooth problems of the form
//!
//! ```text
//! min f(x)  s.t.  g(x) = 0,  h(x) ≤ 0
//! ```
//!
//! Inequalities carry explicit slacks `z > 0` with a log barrier; each
//! iteration solves the reduced Newton system
//!
//! ```text
//! [ ∇²L + Jhᵀ Z⁻¹ M Jh   Jgᵀ ] [dx]   [ −(∇L + Jhᵀ Z⁻¹ (M h + γ e)) ]
//! [ Jg                    0  ] [dλ] = [ −g                            ]
//! ```
//!
//! and takes separate primal and dual fraction-to-boundary steps.

use nalgebra::{DMatrix, DVector};

/// Sparse constraint rows; a column may appear more than once in a row, in
/// which case the values add.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn eq_constraints(&self, x: &[f64], g: &mut [f64]);
    fn eq_jacobian(&self, x: &[f64]) -> SparseRows;
    /// Values of `h(x)`; feasible points have every entry ≤ 0.
    fn ineq_constraints(&self, x: &[f64], h: &mut [f64]);
    fn ineq_jacobian(&self, x: &[f64]) -> SparseRows;
    /// Adds `σ ∇²f + Σ λ_i ∇²g_i + Σ μ_j ∇²h_j` into `hess`.
    fn add_lagrangian_hessian(&self, x: &[f64], sigma: f64, lam: &[f64], mu: &[f64], hess: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor.
    pub xi: f64,
    /// Barrier reduction factor.
    pub sigma: f64,
    pub z0: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 200, xi: 0.99995, sigma: 0.1, z0: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

/// Scaled first-order optimality measures.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktConditions {
    pub feasibility: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl KktConditions {
    pub fn max(&self) -> f64 {
        self.feasibility.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Converged,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmOutcome {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    pub iterations: usize,
    pub status: IpmStatus,
    pub conditions: KktConditions,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn lagrangian_gradient<P: Nlp + ?Sized>(
    nlp: &P,
    x: &[f64],
    mult: &Multipliers,
    jg: &SparseRows,
    jh: &SparseRows,
) -> Vec<f64> {
    let mut lx = vec![0.0; nlp.n_vars()];
    nlp.gradient(x, &mut lx);
    for (row, &l) in jg.iter().zip(&mult.eq) {
        for &(c, v) in row {
            lx[c] += l * v;
        }
    }
    for (row, &m) in jh.iter().zip(&mult.ineq) {
        for &(c, v) in row {
            lx[c] += m * v;
        }
    }
    lx
}

/// Gradient of `f + λᵀg + μᵀh` at `x`.
pub fn lagrangian_gradient_at<P: Nlp + ?Sized>(nlp: &P, x: &[f64], mult: &Multipliers) -> Vec<f64> {
    let jg = nlp.eq_jacobian(x);
    let jh = nlp.ineq_jacobian(x);
    lagrangian_gradient(nlp, x, mult, &jg, &jh)
}

fn conditions(x: &[f64], z: &[f64], g: &[f64], h: &[f64], lx: &[f64], mult: &Multipliers) -> KktConditions {
    let max_h = h.iter().fold(0.0f64, |m, &v| m.max(v));
    let feasibility = norm_inf(g).max(max_h) / (1.0 + norm_inf(x).max(norm_inf(z)));
    let stationarity = norm_inf(lx) / (1.0 + norm_inf(&mult.eq).max(norm_inf(&mult.ineq)));
    let zmu: f64 = z.iter().zip(&mult.ineq).map(|(a, b)| a * b).sum();
    let complementarity = zmu / (1.0 + norm_inf(x));
    KktConditions { feasibility, stationarity, complementarity }
}

/// Optimality measures at `x` with the slacks implied by the inequalities,
/// `z = max(−h(x), 0)`.
pub fn kkt_conditions<P: Nlp + ?Sized>(nlp: &P, x: &[f64], mult: &Multipliers) -> KktConditions {
    let mut g = vec![0.0; nlp.n_eq()];
    let mut h = vec![0.0; nlp.n_ineq()];
    nlp.eq_constraints(x, &mut g);
    nlp.ineq_constraints(x, &mut h);
    let z: Vec<f64> = h.iter().map(|v| (-v).max(0.0)).collect();
    let lx = lagrangian_gradient_at(nlp, x, mult);
    conditions(x, &z, &g, &h, &lx, mult)
}

/// Solves the Newton system, adding `δ I` to the primal block until the step
/// has positive curvature, `dxᵀ (W + δ I) dx ≥ κ ‖dx‖²`. A singular matrix
/// gets a small negative shift on the constraint block, then growing `δ`.
/// `last_delta` carries the accepted shift between iterations.
fn solve_kkt(kkt: DMatrix<f64>, rhs: DVector<f64>, n: usize, last_delta: &mut f64) -> Option<DVector<f64>> {
    const KAPPA: f64 = 1e-8;
    const DELTA_MAX: f64 = 1e20;
    let dim = kkt.nrows();
    let mut delta = 0.0;
    let mut delta_c = 0.0;
    let mut singular_tries = 0;
    loop {
        let mut shifted = kkt.clone();
        for i in 0..n {
            shifted[(i, i)] += delta;
        }
        for i in n..dim {
            shifted[(i, i)] -= delta_c;
        }
        let sol = shifted.lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()));
        let Some(sol) = sol else {
            singular_tries += 1;
            if singular_tries > 20 || delta > DELTA_MAX {
                return None;
            }
            if delta_c == 0.0 {
                delta_c = 1e-8;
            } else {
                // a null direction shared with the constraints needs a primal shift too
                delta = if delta == 0.0 { 1e-4 } else { delta * 100.0 };
            }
            continue;
        };
        let dx = sol.rows(0, n);
        let dx2 = dx.norm_squared();
        let wdx = kkt.view((0, 0), (n, n)) * dx;
        let curvature = dx.dot(&wdx) + delta * dx2;
        if dx2 < 1e-28 || curvature >= KAPPA * dx2 {
            *last_delta = delta;
            return Some(sol);
        }
        delta = if delta == 0.0 {
            if *last_delta == 0.0 { 1e-4 } else { (*last_delta / 3.0).max(1e-20) }
        } else if *last_delta == 0.0 {
            delta * 100.0
        } else {
            delta * 8.0
        };
        if delta > DELTA_MAX {
            return None;
        }
    }
}

/// Runs the interior-point iteration from `x0`.
pub fn solve<P: Nlp + ?Sized>(nlp: &P, x0: &[f64], opts: &IpmOptions) -> IpmOutcome {
    let n = nlp.n_vars();
    let neq = nlp.n_eq();
    let niq = nlp.n_ineq();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; neq];
    let mut h = vec![0.0; niq];
    nlp.eq_constraints(&x, &mut g);
    nlp.ineq_constraints(&x, &mut h);
    let mut jg = nlp.eq_jacobian(&x);
    let mut jh = nlp.ineq_jacobian(&x);

    let mut z: Vec<f64> = h.iter().map(|&hv| if hv < -opts.z0 { -hv } else { opts.z0 }).collect();
    let mut gamma = 1.0;
    let mut mult = Multipliers { eq: vec![0.0; neq], ineq: z.iter().map(|zi| gamma / zi).collect() };

    let mut lx = lagrangian_gradient(nlp, &x, &mult, &jg, &jh);
    let mut cond = conditions(&x, &z, &g, &h, &lx, &mult);
    let mut status = IpmStatus::MaxIter;
    let mut iterations = 0;
    let mut last_delta = 0.0;

    if cond.max() < opts.tol {
        status = IpmStatus::Converged;
    }
    while status == IpmStatus::MaxIter && iterations < opts.max_iter {
        iterations += 1;

        let dim = n + neq;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        {
            let mut hess = DMatrix::<f64>::zeros(n, n);
            nlp.add_lagrangian_hessian(&x, 1.0, &mult.eq, &mult.ineq, &mut hess);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
        }
        let mut rhs = DVector::<f64>::zeros(dim);
        for i in 0..n {
            rhs[i] = -lx[i];
        }
        for (j, row) in jh.iter().enumerate() {
            let d = mult.ineq[j] / z[j];
            let w = (mult.ineq[j] * h[j] + gamma) / z[j];
            for &(a, va) in row {
                rhs[a] -= va * w;
                for &(b, vb) in row {
                    kkt[(a, b)] += d * va * vb;
                }
            }
        }
        for (i, row) in jg.iter().enumerate() {
            for &(c, v) in row {
                kkt[(n + i, c)] += v;
                kkt[(c, n + i)] += v;
            }
            rhs[n + i] = -g[i];
        }

        let Some(step) = solve_kkt(kkt, rhs, n, &mut last_delta) else {
            status = IpmStatus::NumericalFailure;
            break;
        };
        let dx = &step.as_slice()[..n];
        let dlam = &step.as_slice()[n..];

        let mut dz = vec![0.0; niq];
        let mut dmu = vec![0.0; niq];
        for j in 0..niq {
            let jdx: f64 = jh[j].iter().map(|&(c, v)| v * dx[c]).sum();
            dz[j] = -h[j] - z[j] - jdx;
            dmu[j] = -mult.ineq[j] + (gamma - mult.ineq[j] * dz[j]) / z[j];
        }
        let ratio = |v: &[f64], dv: &[f64]| {
            v.iter().zip(dv).filter(|(_, d)| **d < 0.0).fold(1.0f64, |m, (a, d)| m.min(opts.xi * (-a / d)))
        };
        let alpha_p = ratio(&z, &dz);
        let alpha_d = ratio(&mult.ineq, &dmu);

        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for j in 0..niq {
            z[j] += alpha_p * dz[j];
            mult.ineq[j] += alpha_d * dmu[j];
        }
        for i in 0..neq {
            mult.eq[i] += alpha_d * dlam[i];
        }
        if niq > 0 {
            gamma = opts.sigma * z.iter().zip(&mult.ineq).map(|(a, b)| a * b).sum::<f64>() / niq as f64;
        }

        nlp.eq_constraints(&x, &mut g);
        nlp.ineq_constraints(&x, &mut h);
        jg = nlp.eq_jacobian(&x);
        jh = nlp.ineq_jacobian(&x);
        lx = lagrangian_gradient(nlp, &x, &mult, &jg, &jh);
        cond = conditions(&x, &z, &g, &h, &lx, &mult);

        if !x.iter().all(|v| v.is_finite()) || !cond.max().is_finite() {
            status = IpmStatus::NumericalFailure;
            break;
        }
        if cond.max() < opts.tol {
            // also require the measures with slacks implied by h(x)
            let implied: Vec<f64> = h.iter().map(|v| (-v).max(0.0)).collect();
            if conditions(&x, &implied, &g, &h, &lx, &mult).max() < opts.tol {
                status = IpmStatus::Converged;
            }
        }
    }

    IpmOutcome { objective: nlp.objective(&x), x, multipliers: mult, iterations, status, conditions: cond }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min (x0-1)² + (x1-2)²  s.t.  x0 + x1 = 2,  x0² + x1² ≤ 4,  x1 ≤ 1.2
    struct Toy;

    impl Nlp for Toy {
        fn n_vars(&self) -> usize {
            2
        }
        fn n_eq(&self) -> usize {
            1
        }
        fn n_ineq(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (x[0] - 1.0).powi(2) + (x[1] - 2.0).powi(2)
        }
        fn gradient(&self, x: &[f64], grad: &mut [f64]) {
            grad[0] = 2.0 * (x[0] - 1.0);
            grad[1] = 2.0 * (x[1] - 2.0);
        }
        fn eq_constraints(&self, x: &[f64], g: &mut [f64]) {
            g[0] = x[0] + x[1] - 2.0;
        }
        fn eq_jacobian(&self, _x: &[f64]) -> SparseRows {
            vec![vec![(0, 1.0), (1, 1.0)]]
        }
        fn ineq_constraints(&self, x: &[f64], h: &mut [f64]) {
            h[0] = x[0] * x[0] + x[1] * x[1] - 4.0;
            h[1] = x[1] - 1.2;
        }
        fn ineq_jacobian(&self, x: &[f64]) -> SparseRows {
            vec![vec![(0, 2.0 * x[0]), (1, 2.0 * x[1])], vec![(1, 1.0)]]
        }
        fn add_lagrangian_hessian(&self, _x: &[f64], sigma: f64, _lam: &[f64], mu: &[f64], hess: &mut DMatrix<f64>) {
            hess[(0, 0)] += 2.0 * sigma + 2.0 * mu[0];
            hess[(1, 1)] += 2.0 * sigma + 2.0 * mu[0];
        }
    }

    #[test]
    fn solves_toy_with_active_bound() {
        let out = solve(&Toy, &[0.0, 0.0], &IpmOptions { tol: 1e-10, ..Default::default() });
        assert_eq!(out.status, IpmStatus::Converged);
        // unconstrained on the line would be (0.5, 1.5); x1 ≤ 1.2 binds
        assert!((out.x[0] - 0.8).abs() < 1e-7, "{:?}", out.x);
        assert!((out.x[1] - 1.2).abs() < 1e-7);
        assert!(kkt_conditions(&Toy, &out.x, &out.multipliers).max() < 1e-7);
    }

    #[test]
    fn deterministic() {
        let a = solve(&Toy, &[0.3, -0.2], &IpmOptions::default());
        let b = solve(&Toy, &[0.3, -0.2], &IpmOptions::default());
        assert_eq!(a, b);
    }
}
