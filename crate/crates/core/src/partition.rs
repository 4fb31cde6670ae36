//! Regional decomposition: tie lines, duplicated boundary voltages and the
//! per-region coupling matrices `A_k`.
//!
//! Voltages are held in rectangular form so the coupling is linear. For tie
//! line `ij` each adjacent region owns four rows of `A_k`:
//!
//! ```text
//! z⁻ (re, im) = β⁻ (V_own − V_other)
//! z⁺ (re, im) = β⁺ (V_own + V_other)
//! ```
//!
//! where `own` is the endpoint inside the region. The difference rows are
//! therefore oriented per region: at consensus the two regions' `z⁻` images
//! are negatives of each other while the `z⁺` images coincide.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::case::GridCase;

pub const DEFAULT_BETA_MINUS: f64 = 2.0;
pub const DEFAULT_BETA_PLUS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bus {0} has no region assignment")]
    Unassigned(usize),
    #[error("assignment names bus {0}, which is not in the case")]
    UnknownBus(usize),
    #[error("region {0} has no buses")]
    EmptyRegion(usize),
    #[error("region indices start at 1, found {0}")]
    BadRegionIndex(usize),
    #[error("scaling factors must be positive and finite (got {beta_minus}, {beta_plus})")]
    BadScaling { beta_minus: f64, beta_plus: f64 },
}

/// Bus id → region number (1-based, as written in partition files).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionSpec {
    region_of: BTreeMap<usize, usize>,
}

impl RegionSpec {
    pub fn from_map(region_of: BTreeMap<usize, usize>) -> Self {
        Self { region_of }
    }

    /// Every bus in one region.
    pub fn single(case: &GridCase) -> Self {
        Self { region_of: case.buses.iter().map(|b| (b.id, 1)).collect() }
    }

    /// Accepts `bus_id region` lines (`%` or `#` comments) or a JSON object.
    pub fn parse(text: &str) -> Result<Self, PartitionError> {
        if text.trim_start().starts_with('{') {
            let raw: BTreeMap<String, usize> = serde_json::from_str(text).map_err(|e| PartitionError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
            let mut region_of = BTreeMap::new();
            for (k, v) in raw {
                let bus = k.trim().parse::<usize>().map_err(|_| PartitionError::Parse {
                    line: 1,
                    message: format!("`{k}` is not a bus id"),
                })?;
                region_of.insert(bus, v);
            }
            return Ok(Self { region_of });
        }
        let mut region_of = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['%', '#']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
            let parse = |tok: Option<&str>| -> Result<usize, PartitionError> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| PartitionError::Parse {
                    line: i + 1,
                    message: format!("expected `bus_id region_index`, found `{line}`"),
                })
            };
            let bus = parse(it.next())?;
            let region = parse(it.next())?;
            if it.next().is_some() {
                return Err(PartitionError::Parse { line: i + 1, message: "trailing tokens".into() });
            }
            region_of.insert(bus, region);
        }
        Ok(Self { region_of })
    }

    pub fn region_of(&self, bus_id: usize) -> Option<usize> {
        self.region_of.get(&bus_id).copied()
    }

    pub fn num_regions(&self) -> usize {
        self.region_of.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    /// Scaled difference of the endpoint voltages.
    Minus,
    /// Scaled sum of the endpoint voltages.
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Re,
    Im,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieLine {
    pub branch: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    pub from_region: usize,
    pub to_region: usize,
    /// First of the four consensus slots of this line.
    pub first_slot: usize,
}

pub const ROWS_PER_TIE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRow {
    pub slot: usize,
    pub tie: usize,
    pub kind: SlotKind,
    pub component: Component,
    /// Local bus position of the endpoint inside the region.
    pub own: usize,
    /// Local bus position of the duplicated foreign endpoint.
    pub other: usize,
    pub beta: f64,
}

impl CouplingRow {
    /// The two nonzeros of this row as `(column, value)` on the local voltage
    /// vector `[e_0..e_{n-1}, f_0..f_{n-1}]`.
    pub fn entries(&self, n_local_buses: usize) -> [(usize, f64); 2] {
        let offset = match self.component {
            Component::Re => 0,
            Component::Im => n_local_buses,
        };
        let other_sign = match self.kind {
            SlotKind::Minus => -1.0,
            SlotKind::Plus => 1.0,
        };
        [(offset + self.own, self.beta), (offset + self.other, other_sign * self.beta)]
    }
}

/// Sparse `A_k`, acting on the leading `2 · n_local_buses` entries of `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    rows: Vec<CouplingRow>,
    n_local_buses: usize,
}

impl CouplingMatrix {
    pub fn rows(&self) -> &[CouplingRow] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_local_buses(&self) -> usize {
        self.n_local_buses
    }

    pub fn row_value(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].entries(self.n_local_buses).iter().map(|&(c, v)| v * x[c]).sum()
    }

    /// `A_k x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|r| self.row_value(r, x)).collect()
    }

    /// `out += A_kᵀ w`.
    pub fn add_transpose_apply(&self, w: &[f64], out: &mut [f64]) {
        for (row, &wr) in self.rows.iter().zip(w) {
            for (c, v) in row.entries(self.n_local_buses) {
                out[c] += v * wr;
            }
        }
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|row| {
                let mut dense = vec![0.0; n_cols];
                for (c, v) in row.entries(self.n_local_buses) {
                    dense[c] += v;
                }
                dense
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub index: usize,
    /// Case bus positions of R_k, sorted.
    pub interior: Vec<usize>,
    /// Case bus positions of V_k: interior first, then duplicated foreign buses.
    pub buses: Vec<usize>,
    pub neighbors: Vec<usize>,
    /// Active generators located at interior buses.
    pub generators: Vec<usize>,
    pub ties: Vec<usize>,
    pub coupling: CouplingMatrix,
    /// Local position of the case angle reference, when it lies in R_k.
    pub reference: Option<usize>,
    shared: Vec<Vec<usize>>,
    local: HashMap<usize, usize>,
}

impl Region {
    pub fn n_local_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn local_index(&self, bus: usize) -> Option<usize> {
        self.local.get(&bus).copied()
    }

    pub fn neighbor_position(&self, region: usize) -> Option<usize> {
        self.neighbors.binary_search(&region).ok()
    }

    /// Indices of rows of `A_k` shared with the neighbor at `pos` in `neighbors`.
    pub fn shared_rows(&self, pos: usize) -> &[usize] {
        &self.shared[pos]
    }

    /// `A_k x_k`, ordered by consensus slot.
    pub fn coupling_image(&self, x: &[f64]) -> Vec<f64> {
        self.coupling.apply(x)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsensusLayout {
    pub ties: Vec<TieLine>,
}

impl ConsensusLayout {
    pub fn n_slots(&self) -> usize {
        self.ties.len() * ROWS_PER_TIE
    }

    /// The two regions sharing `slot`.
    pub fn owners(&self, slot: usize) -> (usize, usize) {
        let t = &self.ties[slot / ROWS_PER_TIE];
        (t.from_region, t.to_region)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub regions: Vec<Region>,
    pub layout: ConsensusLayout,
    pub beta_minus: f64,
    pub beta_plus: f64,
    /// Non-fatal findings, e.g. regions whose interior is not connected.
    pub warnings: Vec<String>,
}

impl Partition {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    /// Region whose interior holds bus position `bus`.
    pub fn region_of_bus(&self, bus: usize) -> Option<usize> {
        self.regions.iter().position(|r| r.interior.binary_search(&bus).is_ok())
    }
}

/// Splits `case` into regions following `spec`.
pub fn build_partition(
    case: &GridCase,
    spec: &RegionSpec,
    beta_minus: f64,
    beta_plus: f64,
) -> Result<Partition, PartitionError> {
    if !(beta_plus > 0.0 && beta_minus > 0.0 && beta_plus.is_finite() && beta_minus.is_finite()) {
        return Err(PartitionError::BadScaling { beta_minus, beta_plus });
    }
    for &bus in spec.region_of.keys() {
        if case.bus_index(bus).is_none() {
            return Err(PartitionError::UnknownBus(bus));
        }
    }
    let mut region_of_pos = Vec::with_capacity(case.n_buses());
    for bus in &case.buses {
        let k = spec.region_of(bus.id).ok_or(PartitionError::Unassigned(bus.id))?;
        if k == 0 {
            return Err(PartitionError::BadRegionIndex(0));
        }
        region_of_pos.push(k - 1);
    }
    let n_regions = spec.num_regions();
    let mut interior = vec![Vec::new(); n_regions];
    for (pos, &k) in region_of_pos.iter().enumerate() {
        interior[k].push(pos);
    }
    if let Some(empty) = interior.iter().position(Vec::is_empty) {
        return Err(PartitionError::EmptyRegion(empty + 1));
    }

    let mut ties = Vec::new();
    let mut foreign: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_regions];
    let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_regions];
    let mut region_ties: Vec<Vec<usize>> = vec![Vec::new(); n_regions];
    for (l, br) in case.active_branches() {
        let f = case.bus_index(br.from_bus).expect("validated");
        let t = case.bus_index(br.to_bus).expect("validated");
        let (kf, kt) = (region_of_pos[f], region_of_pos[t]);
        if kf == kt {
            continue;
        }
        let idx = ties.len();
        ties.push(TieLine {
            branch: l,
            from_bus: f,
            to_bus: t,
            from_region: kf,
            to_region: kt,
            first_slot: idx * ROWS_PER_TIE,
        });
        foreign[kf].insert(t);
        foreign[kt].insert(f);
        neighbors[kf].insert(kt);
        neighbors[kt].insert(kf);
        region_ties[kf].push(idx);
        region_ties[kt].push(idx);
    }

    let reference = case.reference_bus();
    let mut warnings = Vec::new();
    if beta_minus <= beta_plus {
        warnings.push(format!("beta_minus = {beta_minus} does not exceed beta_plus = {beta_plus}"));
    }
    let mut regions = Vec::with_capacity(n_regions);
    for k in 0..n_regions {
        let mut buses = interior[k].clone();
        buses.extend(foreign[k].iter().copied());
        let local: HashMap<usize, usize> = buses.iter().enumerate().map(|(p, &b)| (b, p)).collect();
        let nv = buses.len();

        let mut rows = Vec::with_capacity(region_ties[k].len() * ROWS_PER_TIE);
        for &ti in &region_ties[k] {
            let tie = &ties[ti];
            let (own, other) =
                if tie.from_region == k { (tie.from_bus, tie.to_bus) } else { (tie.to_bus, tie.from_bus) };
            let (own, other) = (local[&own], local[&other]);
            let layout = [
                (SlotKind::Minus, Component::Re, beta_minus),
                (SlotKind::Minus, Component::Im, beta_minus),
                (SlotKind::Plus, Component::Re, beta_plus),
                (SlotKind::Plus, Component::Im, beta_plus),
            ];
            for (r, (kind, component, beta)) in layout.into_iter().enumerate() {
                rows.push(CouplingRow { slot: tie.first_slot + r, tie: ti, kind, component, own, other, beta });
            }
        }

        let neighbors: Vec<usize> = neighbors[k].iter().copied().collect();
        let shared = neighbors
            .iter()
            .map(|&l| {
                rows.iter()
                    .enumerate()
                    .filter(|(_, row)| {
                        let t = &ties[row.tie];
                        t.from_region == l || t.to_region == l
                    })
                    .map(|(r, _)| r)
                    .collect()
            })
            .collect();

        let generators = case
            .active_generators()
            .filter(|(_, g)| region_of_pos[case.bus_index(g.bus).expect("validated")] == k)
            .map(|(g, _)| g)
            .collect();

        if !interior_connected(case, &interior[k], &region_of_pos, k) {
            let msg = format!("region {} interior is not connected", k + 1);
            log::warn!("{msg}");
            warnings.push(msg);
        }

        regions.push(Region {
            index: k,
            interior: interior[k].clone(),
            reference: reference.filter(|r| region_of_pos[*r] == k).map(|r| local[&r]),
            buses,
            neighbors,
            generators,
            ties: region_ties[k].clone(),
            coupling: CouplingMatrix { rows, n_local_buses: nv },
            shared,
            local,
        });
    }

    Ok(Partition { regions, layout: ConsensusLayout { ties }, beta_minus, beta_plus, warnings })
}

fn interior_connected(case: &GridCase, interior: &[usize], region_of_pos: &[usize], k: usize) -> bool {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for (_, br) in case.active_branches() {
        let f = case.bus_index(br.from_bus).expect("validated");
        let t = case.bus_index(br.to_bus).expect("validated");
        if region_of_pos[f] == k && region_of_pos[t] == k {
            adj.entry(f).or_default().push(t);
            adj.entry(t).or_default().push(f);
        }
    }
    let mut seen = BTreeSet::from([interior[0]]);
    let mut stack = vec![interior[0]];
    while let Some(u) = stack.pop() {
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen.len() == interior.len()
}
