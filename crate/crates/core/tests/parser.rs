mod common;

use gridadmm::case::{build_admittance, power_injection, to_matpower, CaseError};
use gridadmm::opf::{solve_centralized, whole_grid, SolverOptions, CENTRAL_TOL, MAX_ITER};
use gridadmm::{parse_case, Network};
use num_complex::Complex64;

/// Rows of the `mpc.<name>` matrix, counted by scanning the raw text.
fn count_rows(text: &str, name: &str) -> usize {
    let mut lines = text.lines().skip_while(|l| !l.trim_start().starts_with(&format!("mpc.{name} ")));
    lines.next();
    lines
        .take_while(|l| !l.trim_start().starts_with("];"))
        .filter(|l| {
            let body = l.split('%').next().unwrap().trim();
            !body.is_empty()
        })
        .count()
}

#[test]
fn nine_bus_fixture_counts() {
    let text = common::read("case9.m");
    let case = parse_case(&text).unwrap();
    assert_eq!(case.n_buses(), 9);
    assert_eq!(case.n_buses(), count_rows(&text, "bus"));
    assert_eq!(case.generators.len(), 3);
    assert_eq!(case.generators.len(), count_rows(&text, "gen"));
    assert_eq!(case.branches.len(), count_rows(&text, "branch"));
    assert_eq!(case.base_mva, 100.0);
}

#[test]
fn fixtures_round_trip() {
    for name in common::FIXTURES {
        let case = common::case(name);
        let again = parse_case(&to_matpower(&case)).unwrap();
        assert_eq!(case.buses.len(), again.buses.len());
        assert_eq!(case.branches.len(), again.branches.len());
        for (a, b) in case.buses.iter().zip(&again.buses) {
            assert_eq!(a.id, b.id);
            assert!((a.p_load - b.p_load).abs() < 1e-12 && (a.v_max - b.v_max).abs() < 1e-12);
        }
        for (a, b) in case.generators.iter().zip(&again.generators) {
            assert!((a.p_max - b.p_max).abs() < 1e-12);
            assert!((a.cost_a - b.cost_a).abs() <= 1e-9 * a.cost_a.abs().max(1.0));
            assert!((a.cost_b - b.cost_b).abs() <= 1e-9 * a.cost_b.abs().max(1.0));
        }
        for (a, b) in case.branches.iter().zip(&again.branches) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.tap - b.tap).abs() < 1e-12 && (a.shift - b.shift).abs() < 1e-12);
        }
        // and a second trip is textually stable
        assert_eq!(to_matpower(&again), to_matpower(&case));
    }
}

#[test]
fn malformed_files_report_lines() {
    let good = common::read("case9.m");
    let lines: Vec<&str> = good.lines().collect();
    let bus_row = lines.iter().position(|l| l.trim_start().starts_with("mpc.bus ")).unwrap() + 2;

    let mut bad = lines.clone();
    let broken = bad[bus_row - 1].replacen('1', "1x", 1);
    bad[bus_row - 1] = &broken;
    match parse_case(&bad.join("\n")) {
        Err(CaseError::Syntax { line, .. }) => assert_eq!(line, bus_row),
        other => panic!("expected a syntax error, got {other:?}"),
    }

    let unknown = good.replacen("mpc.branch = [\n", "mpc.branch = [\n\t1\t99\t0\t0.1\t0\t0\t0\t0\t0\t0\t1\t-360\t360;\n", 1);
    assert_ne!(unknown, good);
    let branch_row = unknown.lines().position(|l| l.starts_with("mpc.branch = [")).unwrap() + 2;
    assert_eq!(parse_case(&unknown), Err(CaseError::UnknownBus { line: branch_row, bus: 99 }));
    assert!(matches!(parse_case(""), Err(CaseError::Syntax { .. })));
}

#[test]
fn admittance_matches_dense_oracle() {
    for name in common::FIXTURES {
        let case = common::case(name);
        let oracle = common::dense_ybus(&case);
        let y = build_admittance(&case).to_dense();
        for i in 0..case.n_buses() {
            for j in 0..case.n_buses() {
                let d = (y[i][j] - oracle[(i, j)]).norm();
                assert!(d <= 1e-12, "{name} Y[{i}][{j}] off by {d}");
            }
        }
    }
}

#[test]
fn two_bus_injection_by_hand() {
    let text = "mpc.baseMVA = 100;\nmpc.bus = [ 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9; 2 1 0 0 0 0 1 1 0 230 1 1.1 0.9 ];\nmpc.gen = [];\nmpc.branch = [ 1 2 0 0.1 0 0 0 0 0 0 1 -360 360 ];\n";
    let case = parse_case(text).unwrap();
    let y = build_admittance(&case);
    let v = [Complex64::from_polar(1.05, 0.0), Complex64::from_polar(1.0, -0.1)];
    // y = 1/(j0.1) = −j10; I1 = y (V1 − V2)
    let line = Complex64::new(0.0, -10.0);
    let want = v[0] * (line * (v[0] - v[1])).conj();
    assert!((power_injection(&v, &y, 0).unwrap() - want).norm() <= 1e-12);
}

#[test]
fn nine_bus_injections_balance_at_the_optimum() {
    let case = common::case("case9.m");
    let net = Network::new(case.clone());
    let r = solve_centralized(&net, &SolverOptions { tol: CENTRAL_TOL, max_iter: MAX_ITER });
    let region = whole_grid(&case);
    let nv = region.n_local_buses();
    let mut v = vec![Complex64::new(0.0, 0.0); case.n_buses()];
    for (i, &b) in region.buses.iter().enumerate() {
        v[b] = Complex64::new(r.x[i], r.x[nv + i]);
    }
    let ng = region.generators.len();
    for (bus_pos, bus) in case.buses.iter().enumerate() {
        let mut gen = Complex64::new(0.0, 0.0);
        for (k, &g) in region.generators.iter().enumerate() {
            if case.bus_index(case.generators[g].bus) == Some(bus_pos) {
                gen += Complex64::new(r.x[2 * nv + k], r.x[2 * nv + ng + k]);
            }
        }
        let s = power_injection(&v, &net.admittance, bus_pos).unwrap();
        let want = gen - Complex64::new(bus.p_load, bus.q_load);
        assert!((s - want).norm() < 1e-6, "bus {}: {s} vs {want}", bus.id);
    }
}
