//! Power-system case data in per-unit on the system MVA base.

mod parse;
mod ybus;

pub use parse::{parse_case, to_matpower};
pub use ybus::{build_admittance, power_injection, AdmittanceMatrix};

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: reference to unknown bus {bus}")]
    UnknownBus { line: usize, bus: usize },
    #[error("line {line}: unsupported cost model: {message}")]
    UnsupportedCost { line: usize, message: String },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error("bus index {index} out of range for {n} buses")]
    IndexOutOfRange { index: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Pq,
    Pv,
    Reference,
    Isolated,
}

impl BusKind {
    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(BusKind::Pq),
            2 => Some(BusKind::Pv),
            3 => Some(BusKind::Reference),
            4 => Some(BusKind::Isolated),
            _ => None,
        }
    }

    pub fn code(self) -> u32 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Reference => 3,
            BusKind::Isolated => 4,
        }
    }
}

/// A bus. Loads and shunts are per-unit on the case base; `va` is in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub gs: f64,
    pub bs: f64,
    pub area: u32,
    pub vm: f64,
    pub va: f64,
    pub base_kv: f64,
    pub zone: u32,
    pub v_max: f64,
    pub v_min: f64,
}

/// A generator with quadratic cost `a P² + b P + c` acting on per-unit output.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub q_max: f64,
    pub q_min: f64,
    pub vg: f64,
    pub in_service: bool,
    pub p_max: f64,
    pub p_min: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
}

impl Generator {
    pub fn cost(&self, p: f64) -> f64 {
        (self.cost_a * p + self.cost_b) * p + self.cost_c
    }

    pub fn marginal_cost(&self, p: f64) -> f64 {
        2.0 * self.cost_a * p + self.cost_b
    }
}

/// A π-model branch. `tap` is 1.0 for lines; `shift` is in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub rate_a: f64,
    pub tap: f64,
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    index: HashMap<usize, usize>,
}

impl GridCase {
    /// Assembles a case and checks its structural invariants.
    pub fn new(
        base_mva: f64,
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        branches: Vec<Branch>,
    ) -> Result<Self, CaseError> {
        if !(base_mva > 0.0) {
            return Err(CaseError::Invalid(format!("base MVA must be positive, got {base_mva}")));
        }
        if buses.is_empty() {
            return Err(CaseError::Invalid("case has no buses".into()));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (pos, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, pos).is_some() {
                return Err(CaseError::Invalid(format!("duplicate bus id {}", bus.id)));
            }
            if !(bus.v_min > 0.0) || bus.v_min > bus.v_max {
                return Err(CaseError::Invalid(format!(
                    "bus {}: voltage bounds [{}, {}] are not 0 < v_min <= v_max",
                    bus.id, bus.v_min, bus.v_max
                )));
            }
        }
        for (g, gen) in generators.iter().enumerate() {
            if !index.contains_key(&gen.bus) {
                return Err(CaseError::UnknownBus { line: 0, bus: gen.bus });
            }
            if gen.p_min > gen.p_max || gen.q_min > gen.q_max {
                return Err(CaseError::Invalid(format!("generator {g}: inverted limits")));
            }
            if gen.cost_a < 0.0 {
                return Err(CaseError::Invalid(format!("generator {g}: negative quadratic cost")));
            }
        }
        for (l, br) in branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if !index.contains_key(&bus) {
                    return Err(CaseError::UnknownBus { line: 0, bus });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(CaseError::Invalid(format!("branch {l} is a self loop")));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(CaseError::Invalid(format!("branch {l} has zero impedance")));
            }
        }
        Ok(Self { base_mva, buses, generators, branches, index })
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn reference_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Reference)
    }

    pub fn active_generators(&self) -> impl Iterator<Item = (usize, &Generator)> {
        self.generators.iter().enumerate().filter(|(_, g)| g.in_service)
    }

    pub fn active_branches(&self) -> impl Iterator<Item = (usize, &Branch)> {
        self.branches.iter().enumerate().filter(|(_, b)| b.in_service)
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.p_load).sum()
    }

    /// Generation cost of a per-generator dispatch (indexed like `generators`).
    pub fn cost_of(&self, dispatch: &[f64]) -> f64 {
        self.generators
            .iter()
            .zip(dispatch)
            .filter(|(g, _)| g.in_service)
            .map(|(g, &p)| g.cost(p))
            .sum()
    }

    /// True when every bus is reachable through in-service branches.
    pub fn is_connected(&self) -> bool {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for (_, br) in self.active_branches() {
            let (f, t) = (self.index[&br.from_bus], self.index[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// MW (or MVAr) to per-unit on `base_mva`.
pub fn to_per_unit(value: f64, base_mva: f64) -> f64 {
    value / base_mva
}

pub fn from_per_unit(value: f64, base_mva: f64) -> f64 {
    value * base_mva
}
