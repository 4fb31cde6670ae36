#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use num_complex::Complex64;

use gridadmm::opf::{solve_centralized, SolverOptions, CENTRAL_TOL, MAX_ITER};
use gridadmm::{build_partition, parse_case, GridCase, Network, Partition, RegionSpec};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap()
}

pub fn case(name: &str) -> GridCase {
    parse_case(&read(name)).unwrap()
}

pub fn setup(case_file: &str, part: &str) -> (Network, Partition) {
    let net = Network::new(case(case_file));
    let spec = RegionSpec::parse(&read(part)).unwrap();
    let partition = build_partition(&net.case, &spec, 2.0, 1.0).unwrap();
    (net, partition)
}

pub fn centralized(net: &Network) -> f64 {
    solve_centralized(net, &SolverOptions { tol: CENTRAL_TOL, max_iter: MAX_ITER }).cost
}

pub const FIXTURES: [&str; 4] = ["case9.m", "case14.m", "case30.m", "case118.m"];

/// `Y = Cfᵀ Yf + Ctᵀ Yt + diag(Ysh)` from dense incidence matrices.
pub fn dense_ybus(case: &GridCase) -> DMatrix<Complex64> {
    let n = case.n_buses();
    let branches: Vec<_> = case.branches.iter().filter(|b| b.in_service).collect();
    let m = branches.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut cf = DMatrix::from_element(m, n, zero);
    let mut ct = DMatrix::from_element(m, n, zero);
    let (mut yff, mut yft, mut ytf, mut ytt) =
        (DMatrix::from_element(m, m, zero), DMatrix::from_element(m, m, zero), DMatrix::from_element(m, m, zero), DMatrix::from_element(m, m, zero));
    for (k, br) in branches.iter().enumerate() {
        cf[(k, case.bus_index(br.from_bus).unwrap())] = Complex64::new(1.0, 0.0);
        ct[(k, case.bus_index(br.to_bus).unwrap())] = Complex64::new(1.0, 0.0);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let t = Complex64::from_polar(br.tap, br.shift);
        let bc = Complex64::new(0.0, br.b / 2.0);
        ytt[(k, k)] = ys + bc;
        yff[(k, k)] = (ys + bc) / (t * t.conj());
        yft[(k, k)] = -ys / t.conj();
        ytf[(k, k)] = -ys / t;
    }
    let yf = &yff * &cf + &yft * &ct;
    let yt = &ytf * &cf + &ytt * &ct;
    let mut y = cf.transpose() * yf + ct.transpose() * yt;
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.gs, bus.bs);
    }
    y
}
