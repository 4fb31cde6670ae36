use num_complex::Complex64;

use super::{CaseError, GridCase};

/// Sparse bus admittance matrix, rows indexed by bus position in the case.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    rows: Vec<Vec<(usize, Complex64)>>,
    neighbors: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Structural nonzeros of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |e| e.0) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Ω_i: buses other than `i` joined to it by an in-service branch.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                dense[i][j] = y;
            }
        }
        dense
    }
}

fn accumulate(row: &mut Vec<(usize, Complex64)>, j: usize, y: Complex64) {
    match row.binary_search_by_key(&j, |e| e.0) {
        Ok(k) => row[k].1 += y,
        Err(k) => row.insert(k, (j, y)),
    }
}

/// Assembles Y with the π branch model including off-nominal taps and phase
/// shifters, plus bus shunts on the diagonal.
pub fn build_admittance(case: &GridCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut neighbors = vec![Vec::new(); n];
    for (i, bus) in case.buses.iter().enumerate() {
        let shunt = Complex64::new(bus.gs, bus.bs);
        if shunt != Complex64::new(0.0, 0.0) {
            accumulate(&mut rows[i], i, shunt);
        }
    }
    for (_, br) in case.active_branches() {
        let f = case.bus_index(br.from_bus).expect("validated branch");
        let t = case.bus_index(br.to_bus).expect("validated branch");
        let ys = Complex64::new(br.r, br.x).inv();
        let charging = Complex64::new(0.0, br.b / 2.0);
        let tap = Complex64::from_polar(br.tap, br.shift);
        let ytt = ys + charging;
        let yff = ytt / (tap * tap.conj());
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        accumulate(&mut rows[f], f, yff);
        accumulate(&mut rows[f], t, yft);
        accumulate(&mut rows[t], f, ytf);
        accumulate(&mut rows[t], t, ytt);
        if !neighbors[f].contains(&t) {
            neighbors[f].push(t);
            neighbors[t].push(f);
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    AdmittanceMatrix { rows, neighbors }
}

/// Complex power injected into the network at bus position `i`:
/// `S_i = V_i · conj(Σ_j Y_ij V_j)`.
pub fn power_injection(v: &[Complex64], y: &AdmittanceMatrix, i: usize) -> Result<Complex64, CaseError> {
    let n = y.dim();
    if v.len() != n {
        return Err(CaseError::Invalid(format!("voltage vector has {} entries for {n} buses", v.len())));
    }
    if i >= n {
        return Err(CaseError::IndexOutOfRange { index: i, n });
    }
    let current: Complex64 = y.row(i).iter().map(|&(j, yij)| yij * v[j]).sum();
    Ok(v[i] * current.conj())
}
