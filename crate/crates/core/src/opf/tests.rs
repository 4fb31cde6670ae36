use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::admm::consensus_value;
use crate::case::parse_case;
use crate::nlp::Nlp;

fn fixture(name: &str) -> GridCase {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn partition_of(case: &GridCase, file: &str) -> crate::partition::Partition {
    let text = std::fs::read_to_string(format!("{}/fixtures/{file}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    build_partition(case, &RegionSpec::parse(&text).unwrap(), DEFAULT_BETA_MINUS, DEFAULT_BETA_PLUS).unwrap()
}

const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [ 1 0 0 100 -100 1 100 1 PMAX 0 ];
mpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1 -360 360 ];
mpc.gencost = [ 2 0 0 3 0.01 20 5 ];
";

#[test]
fn centralized_references() {
    for (name, want) in [("case9.m", 5296.6868), ("case14.m", 8081.53), ("case30.m", 574.517)] {
        let r = solve_centralized_case(&fixture(name), CENTRAL_TOL);
        assert_eq!(r.status, SolveStatus::LocalOptimal, "{name}");
        assert!((r.cost - want).abs() / want < 5e-3, "{name}: {}", r.cost);
        assert!(r.kkt_residual <= CENTRAL_TOL * 10.0, "{name}: kkt {}", r.kkt_residual);
    }
}

#[test]
fn lossless_two_bus_conserves_power() {
    let case = parse_case(&TWO_BUS.replace("PMAX", "200")).unwrap();
    let r = solve_centralized_case(&case, CENTRAL_TOL);
    assert_eq!(r.status, SolveStatus::LocalOptimal);
    // x = [e1, e2, f1, f2, Pg, Qg]
    assert!((r.x[4] - 0.5).abs() < 1e-6, "Pg = {}", r.x[4]);
    let want = 0.01 * 50.0 * 50.0 + 20.0 * 50.0 + 5.0;
    assert!((r.cost - want).abs() / want < 1e-6);
}

#[test]
fn short_capacity_is_infeasible() {
    let case = parse_case(&TWO_BUS.replace("PMAX", "40")).unwrap();
    assert_eq!(solve_centralized_case(&case, CENTRAL_TOL).status, SolveStatus::Infeasible);
}

#[test]
fn single_region_with_vanishing_penalty_is_centralized() {
    let case = fixture("case9.m");
    let net = Network::new(case.clone());
    let opts = SolverOptions { tol: CENTRAL_TOL, max_iter: MAX_ITER };
    let central = solve_centralized(&net, &opts);
    let region = whole_grid(&case);
    let local = solve_local(&net, &LocalProblem::coupled(&region, &[], &[], 1e-9), &opts);
    assert_eq!(local.status, SolveStatus::LocalOptimal);
    assert!((local.objective - central.cost).abs() / central.cost <= 1e-6);
}

#[test]
fn uncoupled_region_solve_balances_its_own_buses() {
    let case = fixture("case14.m");
    let net = Network::new(case.clone());
    let partition = partition_of(&case, "case14_2.part");
    for region in &partition.regions {
        let problem = LocalProblem::uncoupled(region);
        let r = solve_local(&net, &problem, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::LocalOptimal);
        let model = problem.model(&net);
        let mut g = vec![0.0; model.n_eq()];
        model.eq_constraints(&r.x, &mut g);
        assert!(g.iter().all(|v| v.abs() < 1e-5));
        assert!(kkt_residual(&net, &problem, &r.x, &r.multipliers) <= LOCAL_TOL * 10.0);
    }
}

#[test]
fn short_region_imports_through_its_copies() {
    // region 5 of this split carries more load than its generators can serve
    let case = fixture("case118.m");
    let net = Network::new(case.clone());
    let partition = partition_of(&case, "case118_8.part");
    for region in &partition.regions {
        let r = solve_local(&net, &LocalProblem::uncoupled(region), &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::LocalOptimal, "region {}", region.index);
    }
}

#[test]
fn random_point_is_far_from_stationary() {
    let case = fixture("case9.m");
    let net = Network::new(case.clone());
    let region = whole_grid(&case);
    let problem = LocalProblem::uncoupled(&region);
    let model = problem.model(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x = random_point(&model, &mut rng);
        let mult = nlp::Multipliers { eq: vec![0.0; model.n_eq()], ineq: vec![0.0; model.n_ineq()] };
        assert!(kkt_residual(&net, &problem, &x, &mult) > 0.1);
    }
}

#[test]
fn warm_started_solves_repeat_exactly() {
    let case = fixture("case14.m");
    let net = Network::new(case.clone());
    let partition = partition_of(&case, "case14_2.part");
    let region = &partition.regions[1];
    let init = solve_local(&net, &LocalProblem::uncoupled(region), &SolverOptions::default());
    let z = region.coupling_image(&init.x);
    let lambda = vec![3.0; z.len()];
    let problem = LocalProblem::coupled(region, &z, &lambda, 500.0).with_warm_start(&init.x);
    let a = solve_local(&net, &problem, &SolverOptions::default());
    let b = solve_local(&net, &problem, &SolverOptions::default());
    assert_eq!(a, b);
}

#[test]
fn residual_shrinks_as_penalty_grows() {
    let case = fixture("case14.m");
    let net = Network::new(case.clone());
    let partition = partition_of(&case, "case14_2.part");
    let images: Vec<Vec<f64>> = partition
        .regions
        .iter()
        .map(|r| r.coupling_image(&solve_local(&net, &LocalProblem::uncoupled(r), &SolverOptions::default()).x))
        .collect();
    let region = &partition.regions[0];
    let rows = region.shared_rows(0);
    let z: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let kind = region.coupling.rows()[r].kind;
            consensus_value(kind, 0.0, 0.0, 1.0, 1.0, images[0][r], images[1][partition.regions[1].shared_rows(0)[i]])
        })
        .collect();
    let lambda = vec![0.0; z.len()];
    let mut previous = f64::INFINITY;
    for rho in [10.0, 100.0, 1e3, 1e4] {
        let r = solve_local(&net, &LocalProblem::coupled(region, &z, &lambda, rho), &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::LocalOptimal);
        let residual = crate::admm::primal_residue(&region.coupling_image(&r.x), &z);
        assert!(residual <= previous + 1e-9, "rho {rho}: {residual} > {previous}");
        previous = residual;
    }
}

/// Three buses; region 0 holds bus 1 only, with its voltage fixed at 1∠0,
/// so its whole feasible set is parametrized by the duplicated voltage of
/// bus 2.
const THREE_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 100 20 0 0 1 1 0 230 1 1.0 1.0;
  2 1 50 10 0 0 1 1 0 230 1 1.1 0.9;
  3 2 30 5 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 500 -500 1 100 1 500 0;
  3 0 0 500 -500 1 100 1 500 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360;
  2 3 0.01 0.1 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0.001 1 0;
  2 0 0 3 0.001 1 0;
];
";

#[test]
fn boundary_region_matches_grid_search() {
    let case = parse_case(THREE_BUS).unwrap();
    let net = Network::new(case.clone());
    let spec = RegionSpec::from_map([(1, 1), (2, 2), (3, 2)].into_iter().collect());
    let partition = build_partition(&case, &spec, 2.0, 1.0).unwrap();
    let region = &partition.regions[0];
    assert_eq!(region.coupling.n_rows(), 4);

    let y = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..4 {
        let z = [
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            2.0 + rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ];
        let lambda: Vec<f64> = (0..4).map(|_| rng.random_range(-20.0..20.0)).collect();
        let rho = rng.random_range(1e3..1e4);

        let objective = |e2: f64, f2: f64| -> Option<f64> {
            if !(0.81..=1.21).contains(&(e2 * e2 + f2 * f2)) {
                return None;
            }
            let v1 = Complex64::new(1.0, 0.0);
            let v2 = Complex64::new(e2, f2);
            let s1 = v1 * (y * (v1 - v2)).conj();
            let pg_mw = 100.0 * s1.re + 100.0;
            let qg_mw = 100.0 * s1.im + 20.0;
            if !(0.0..=500.0).contains(&pg_mw) || !(-500.0..=500.0).contains(&qg_mw) {
                return None;
            }
            let a = [2.0 * (1.0 - e2), 2.0 * (0.0 - f2), 1.0 + e2, f2];
            let coupling: f64 =
                (0..4).map(|r| lambda[r] * (a[r] - z[r]) + 0.5 * rho * (a[r] - z[r]).powi(2)).sum();
            Some(0.001 * pg_mw * pg_mw + pg_mw + coupling)
        };
        let (mut ce, mut cf, mut half, mut step) = (1.0, 0.0, 0.35, 0.005);
        let mut best = f64::INFINITY;
        for _ in 0..4 {
            let n = (half / step) as i64;
            let (mut be, mut bf) = (ce, cf);
            for i in -n..=n {
                for j in -n..=n {
                    let (e, f) = (ce + i as f64 * step, cf + j as f64 * step);
                    if let Some(v) = objective(e, f) {
                        if v < best {
                            (best, be, bf) = (v, e, f);
                        }
                    }
                }
            }
            (ce, cf) = (be, bf);
            half = 4.0 * step;
            step /= 40.0;
        }

        let r = solve_local(&net, &LocalProblem::coupled(region, &z, &lambda, rho), &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::LocalOptimal);
        assert!((r.objective - best).abs() <= 1e-3 * best.abs(), "ipm {} vs grid {best}", r.objective);
    }
}

fn random_point(model: &OpfModel<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nv = model.n_local_buses();
    let mut x = model.flat_start();
    for i in 0..nv {
        x[i] = rng.random_range(0.92..1.08);
        x[nv + i] = rng.random_range(-0.2..0.2);
    }
    for v in x.iter_mut().skip(2 * nv) {
        *v += rng.random_range(-0.3..0.3);
    }
    x
}

fn close(fd: f64, exact: f64) -> bool {
    (fd - exact).abs() <= 1e-6 * exact.abs().max(1.0)
}

fn dense(rows: &crate::nlp::SparseRows, n: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut d = vec![0.0; n];
            for &(c, v) in row {
                d[c] += v;
            }
            d
        })
        .collect()
}

/// Central differences of the objective, both constraint blocks and the
/// Lagrangian gradient against the analytic derivatives.
fn check_derivatives(model: &OpfModel<'_>, x: &[f64], rng: &mut ChaCha8Rng) {
    let h = 1e-7;
    let n = model.n_vars();
    let (ne, ni) = (model.n_eq(), model.n_ineq());
    let mut grad = vec![0.0; n];
    model.gradient(x, &mut grad);
    let jg = dense(&model.eq_jacobian(x), n);
    let jh = dense(&model.ineq_jacobian(x), n);
    let lam: Vec<f64> = (0..ne).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu: Vec<f64> = (0..ni).map(|_| rng.random_range(0.0..1.0)).collect();
    let mult = nlp::Multipliers { eq: lam.clone(), ineq: mu.clone() };
    let mut hess = nalgebra::DMatrix::zeros(n, n);
    model.add_lagrangian_hessian(x, 1.0, &lam, &mu, &mut hess);

    let (mut gp, mut gm) = (vec![0.0; ne], vec![0.0; ne]);
    let (mut hp, mut hm) = (vec![0.0; ni], vec![0.0; ni]);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fd = (model.objective(&xp) - model.objective(&xm)) / (2.0 * h);
        assert!(close(fd, grad[j]), "df/dx{j}: {fd} vs {}", grad[j]);
        model.eq_constraints(&xp, &mut gp);
        model.eq_constraints(&xm, &mut gm);
        for i in 0..ne {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!(close(fd, jg[i][j]), "dg{i}/dx{j}: {fd} vs {}", jg[i][j]);
        }
        model.ineq_constraints(&xp, &mut hp);
        model.ineq_constraints(&xm, &mut hm);
        for i in 0..ni {
            let fd = (hp[i] - hm[i]) / (2.0 * h);
            assert!(close(fd, jh[i][j]), "dh{i}/dx{j}: {fd} vs {}", jh[i][j]);
        }
        let lp = nlp::lagrangian_gradient_at(model, &xp, &mult);
        let lm = nlp::lagrangian_gradient_at(model, &xm, &mult);
        for i in 0..n {
            let fd = (lp[i] - lm[i]) / (2.0 * h);
            assert!(close(fd, hess[(i, j)]), "d2L/dx{i}dx{j}: {fd} vs {}", hess[(i, j)]);
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let case = fixture("case9.m");
    let net = Network::new(case.clone());
    let region = whole_grid(&case);
    let model = LocalProblem::uncoupled(&region).model(&net);
    for _ in 0..5 {
        let x = random_point(&model, &mut rng);
        check_derivatives(&model, &x, &mut rng);
    }

    let case = fixture("case14.m");
    let net = Network::new(case.clone());
    let partition = partition_of(&case, "case14_2.part");
    for region in &partition.regions {
        let rows = region.coupling.n_rows();
        let z: Vec<f64> = (0..rows).map(|_| rng.random_range(-0.5..2.0)).collect();
        let lambda: Vec<f64> = (0..rows).map(|_| rng.random_range(-100.0..100.0)).collect();
        let model = LocalProblem::coupled(region, &z, &lambda, 250.0).model(&net);
        for _ in 0..5 {
            let x = random_point(&model, &mut rng);
            check_derivatives(&model, &x, &mut rng);
        }
    }
}
