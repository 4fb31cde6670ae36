//! Rectangular-coordinate AC OPF over one region's extended bus set.
//!
//! Variable layout: `[e (nv), f (nv), P_g (ng), Q_g (ng)]` where `V = e + jf`.

use nalgebra::DMatrix;

use crate::case::{AdmittanceMatrix, GridCase};
use crate::nlp::{Nlp, SparseRows};
use crate::partition::{CouplingMatrix, Region};

/// Augmented-Lagrangian coupling term `λᵀ(Ax − z) + ρ/2 ‖Ax − z‖²`.
#[derive(Debug, Clone, Copy)]
pub struct Coupling<'a> {
    pub matrix: &'a CouplingMatrix,
    pub lambda: &'a [f64],
    pub z: &'a [f64],
    pub rho: f64,
}

#[derive(Debug, Clone)]
struct GenData {
    p_min: f64,
    p_max: f64,
    q_min: f64,
    q_max: f64,
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Debug, Clone, Copy)]
enum Bound {
    Upper(usize, f64),
    Lower(usize, f64),
}

#[derive(Debug, Clone)]
pub struct OpfModel<'a> {
    nv: usize,
    ni: usize,
    /// Admittance rows of interior buses in local columns: `(j, G, B)`.
    rows: Vec<Vec<(usize, f64, f64)>>,
    p_load: Vec<f64>,
    q_load: Vec<f64>,
    bus_gens: Vec<Vec<usize>>,
    gens: Vec<GenData>,
    v_min2: Vec<f64>,
    v_max2: Vec<f64>,
    /// Local buses whose imaginary voltage part is pinned to zero.
    anchors: Vec<usize>,
    fixed: Vec<(usize, f64)>,
    bounds: Vec<Bound>,
    coupling: Option<Coupling<'a>>,
    scale: f64,
}

impl<'a> OpfModel<'a> {
    pub fn new(
        case: &GridCase,
        y: &AdmittanceMatrix,
        region: &Region,
        anchor: Option<usize>,
        coupling: Option<Coupling<'a>>,
        scale: f64,
    ) -> Self {
        let nv = region.n_local_buses();
        let ni = region.n_interior();
        let rows = region
            .interior
            .iter()
            .map(|&bus| {
                y.row(bus)
                    .iter()
                    .map(|&(j, yij)| {
                        let lj = region.local_index(j).expect("neighbors of interior buses are local");
                        (lj, yij.re, yij.im)
                    })
                    .collect()
            })
            .collect();
        let p_load = region.interior.iter().map(|&b| case.buses[b].p_load).collect();
        let q_load = region.interior.iter().map(|&b| case.buses[b].q_load).collect();
        let v_min2 = region.buses.iter().map(|&b| case.buses[b].v_min.powi(2)).collect();
        let v_max2 = region.buses.iter().map(|&b| case.buses[b].v_max.powi(2)).collect();

        let mut bus_gens = vec![Vec::new(); ni];
        let mut gens = Vec::with_capacity(region.generators.len());
        for (k, &g) in region.generators.iter().enumerate() {
            let gen = &case.generators[g];
            let bus = region.local_index(case.bus_index(gen.bus).expect("validated")).expect("interior generator");
            bus_gens[bus].push(k);
            gens.push(GenData {
                p_min: gen.p_min,
                p_max: gen.p_max,
                q_min: gen.q_min,
                q_max: gen.q_max,
                a: gen.cost_a,
                b: gen.cost_b,
                c: gen.cost_c,
            });
        }
        let ng = gens.len();
        let mut fixed = Vec::new();
        let mut bounds = Vec::new();
        for (k, g) in gens.iter().enumerate() {
            for (var, lo, hi) in [(2 * nv + k, g.p_min, g.p_max), (2 * nv + ng + k, g.q_min, g.q_max)] {
                if lo == hi {
                    fixed.push((var, lo));
                    continue;
                }
                if hi.is_finite() {
                    bounds.push(Bound::Upper(var, hi));
                }
                if lo.is_finite() {
                    bounds.push(Bound::Lower(var, lo));
                }
            }
        }
        let mut anchors: Vec<usize> = region.reference.into_iter().collect();
        if let Some(a) = anchor {
            if !anchors.contains(&a) {
                anchors.push(a);
            }
        }
        Self {
            nv,
            ni,
            rows,
            p_load,
            q_load,
            bus_gens,
            gens,
            v_min2,
            v_max2,
            anchors,
            fixed,
            bounds,
            coupling,
            scale,
        }
    }

    pub fn n_local_buses(&self) -> usize {
        self.nv
    }

    pub fn n_generators(&self) -> usize {
        self.gens.len()
    }

    pub fn dim(&self) -> usize {
        2 * self.nv + 2 * self.gens.len()
    }

    fn pg(&self, k: usize) -> usize {
        2 * self.nv + k
    }

    fn qg(&self, k: usize) -> usize {
        2 * self.nv + self.gens.len() + k
    }

    /// Flat start: unit voltages, generation at the midpoint of its limits.
    pub fn flat_start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for i in 0..self.nv {
            x[i] = 1.0;
        }
        for (k, g) in self.gens.iter().enumerate() {
            x[self.pg(k)] = midpoint(g.p_min, g.p_max);
            x[self.qg(k)] = midpoint(g.q_min, g.q_max);
        }
        x
    }

    /// Clips generator outputs of a warm start into their limits.
    pub fn clip(&self, x: &mut [f64]) {
        for (k, g) in self.gens.iter().enumerate() {
            let (p, q) = (self.pg(k), self.qg(k));
            x[p] = x[p].clamp(g.p_min, g.p_max);
            x[q] = x[q].clamp(g.q_min, g.q_max);
        }
    }

    /// Generation cost of the region at `x`, unscaled.
    pub fn generation_cost(&self, x: &[f64]) -> f64 {
        self.gens.iter().enumerate().map(|(k, g)| (g.a * x[self.pg(k)] + g.b) * x[self.pg(k)] + g.c).sum()
    }

    /// Cost plus coupling terms, unscaled.
    pub fn augmented_objective(&self, x: &[f64]) -> f64 {
        let mut total = self.generation_cost(x);
        if let Some(c) = &self.coupling {
            for r in 0..c.matrix.n_rows() {
                let res = c.matrix.row_value(r, x) - c.z[r];
                total += c.lambda[r] * res + 0.5 * c.rho * res * res;
            }
        }
        total
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Real and imaginary parts of `Σ_j Y_ij V_j` for interior bus `i`.
    fn current(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let nv = self.nv;
        self.rows[i].iter().fold((0.0, 0.0), |(a, b), &(j, g, bb)| {
            let (e, f) = (x[j], x[nv + j]);
            (a + g * e - bb * f, b + g * f + bb * e)
        })
    }

    /// Complex power injected into the network at interior bus `i`.
    pub fn injection(&self, i: usize, x: &[f64]) -> (f64, f64) {
        let (a, b) = self.current(i, x);
        let (e, f) = (x[i], x[self.nv + i]);
        (e * a + f * b, f * a - e * b)
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi.min(0.0),
        (false, false) => 0.0,
    }
}

impl Nlp for OpfModel<'_> {
    fn n_vars(&self) -> usize {
        self.dim()
    }

    fn n_eq(&self) -> usize {
        2 * self.ni + self.anchors.len() + self.fixed.len()
    }

    fn n_ineq(&self) -> usize {
        2 * self.nv + self.bounds.len()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.scale * self.augmented_objective(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        for (k, g) in self.gens.iter().enumerate() {
            let p = self.pg(k);
            grad[p] = self.scale * (2.0 * g.a * x[p] + g.b);
        }
        if let Some(c) = &self.coupling {
            let w: Vec<f64> = (0..c.matrix.n_rows())
                .map(|r| self.scale * (c.lambda[r] + c.rho * (c.matrix.row_value(r, x) - c.z[r])))
                .collect();
            c.matrix.add_transpose_apply(&w, grad);
        }
    }

    fn eq_constraints(&self, x: &[f64], g: &mut [f64]) {
        for i in 0..self.ni {
            let (p, q) = self.injection(i, x);
            let (mut pg, mut qg) = (0.0, 0.0);
            for &k in &self.bus_gens[i] {
                pg += x[self.pg(k)];
                qg += x[self.qg(k)];
            }
            g[2 * i] = p + self.p_load[i] - pg;
            g[2 * i + 1] = q + self.q_load[i] - qg;
        }
        let mut row = 2 * self.ni;
        for &a in &self.anchors {
            g[row] = x[self.nv + a];
            row += 1;
        }
        for &(var, value) in &self.fixed {
            g[row] = x[var] - value;
            row += 1;
        }
    }

    fn eq_jacobian(&self, x: &[f64]) -> SparseRows {
        let nv = self.nv;
        let mut jac = Vec::with_capacity(self.n_eq());
        for i in 0..self.ni {
            let (a, b) = self.current(i, x);
            let (ei, fi) = (x[i], x[nv + i]);
            let mut dp = Vec::with_capacity(2 * self.rows[i].len() + 2 + self.bus_gens[i].len());
            let mut dq = Vec::with_capacity(dp.capacity());
            for &(j, g, bb) in &self.rows[i] {
                dp.push((j, ei * g + fi * bb));
                dp.push((nv + j, -ei * bb + fi * g));
                dq.push((j, fi * g - ei * bb));
                dq.push((nv + j, -fi * bb - ei * g));
            }
            dp.push((i, a));
            dp.push((nv + i, b));
            dq.push((i, -b));
            dq.push((nv + i, a));
            for &k in &self.bus_gens[i] {
                dp.push((self.pg(k), -1.0));
                dq.push((self.qg(k), -1.0));
            }
            jac.push(dp);
            jac.push(dq);
        }
        for &a in &self.anchors {
            jac.push(vec![(nv + a, 1.0)]);
        }
        for &(var, _) in &self.fixed {
            jac.push(vec![(var, 1.0)]);
        }
        jac
    }

    fn ineq_constraints(&self, x: &[f64], h: &mut [f64]) {
        let nv = self.nv;
        for i in 0..nv {
            let m2 = x[i] * x[i] + x[nv + i] * x[nv + i];
            h[2 * i] = m2 - self.v_max2[i];
            h[2 * i + 1] = self.v_min2[i] - m2;
        }
        for (r, bound) in self.bounds.iter().enumerate() {
            h[2 * nv + r] = match *bound {
                Bound::Upper(v, hi) => x[v] - hi,
                Bound::Lower(v, lo) => lo - x[v],
            };
        }
    }

    fn ineq_jacobian(&self, x: &[f64]) -> SparseRows {
        let nv = self.nv;
        let mut jac = Vec::with_capacity(self.n_ineq());
        for i in 0..nv {
            let (de, df) = (2.0 * x[i], 2.0 * x[nv + i]);
            jac.push(vec![(i, de), (nv + i, df)]);
            jac.push(vec![(i, -de), (nv + i, -df)]);
        }
        for bound in &self.bounds {
            jac.push(match *bound {
                Bound::Upper(v, _) => vec![(v, 1.0)],
                Bound::Lower(v, _) => vec![(v, -1.0)],
            });
        }
        jac
    }

    fn add_lagrangian_hessian(&self, _x: &[f64], sigma: f64, lam: &[f64], mu: &[f64], hess: &mut DMatrix<f64>) {
        let nv = self.nv;
        let s = sigma * self.scale;
        for (k, g) in self.gens.iter().enumerate() {
            let p = self.pg(k);
            hess[(p, p)] += s * 2.0 * g.a;
        }
        if let Some(c) = &self.coupling {
            for row in c.matrix.rows() {
                let entries = row.entries(c.matrix.n_local_buses());
                for &(a, va) in &entries {
                    for &(b, vb) in &entries {
                        hess[(a, b)] += s * c.rho * va * vb;
                    }
                }
            }
        }
        // power-balance terms are bilinear in (e, f)
        let mut add = |a: usize, b: usize, v: f64| {
            hess[(a, b)] += v;
            hess[(b, a)] += v;
        };
        for i in 0..self.ni {
            let (lp, lq) = (lam[2 * i], lam[2 * i + 1]);
            let (ei, fi) = (i, nv + i);
            for &(j, g, b) in &self.rows[i] {
                let (ej, fj) = (j, nv + j);
                add(ei, ej, lp * g - lq * b);
                add(fi, fj, lp * g - lq * b);
                add(ei, fj, -lp * b - lq * g);
                add(fi, ej, lp * b + lq * g);
            }
        }
        for i in 0..nv {
            let w = 2.0 * (mu[2 * i] - mu[2 * i + 1]);
            hess[(i, i)] += w;
            hess[(nv + i, nv + i)] += w;
        }
    }
}
