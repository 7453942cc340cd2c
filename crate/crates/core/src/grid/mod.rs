//! Algebraic network: admittance matrix, island detection, the linear
//! network solve and the steady-state power flow used to initialise runs.
//!
//! Line admittances use the convention `y = G - jB`, so `B` is positive for
//! an inductive series branch. With that convention the two-bus transfer
//! power between an internal source and a stiff bus is
//! `P = V_out^2 G + V_out V_S (-G cos d + B sin d)`, which reduces to
//! [`injection_power`] with the transfer pair `(-G, B)`; for a lossless branch
//! both forms coincide.

mod powerflow;
mod solve;

pub use powerflow::{init_steady_state, DeviceOperatingPoint, DispatchTarget, SteadyState};
pub use solve::{solve_bus_voltages, DeviceSource, NetworkSolution, NetworkSolver};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::GridError;

pub type C64 = Complex64;

/// System power base, MVA.
pub const BASE_MVA: f64 = 100.0;
/// Network voltage base, kV.
pub const BASE_KV: f64 = 230.0;
/// Default fault shunt conductance, pu.
pub const DEFAULT_FAULT_CONDUCTANCE: f64 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Device,
    Load,
    Passive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub nominal_kv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStatus {
    Closed,
    Open,
}

/// Pi-model branch. `g`/`b` describe the series admittance `g - jb`,
/// `charging` is the total shunt susceptance split evenly between the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: usize,
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub charging: f64,
    pub status: LineStatus,
}

impl Line {
    pub fn from_impedance(id: usize, from: usize, to: usize, r: f64, x: f64, charging: f64) -> Self {
        let z2 = r * r + x * x;
        Self { id, from, to, g: r / z2, b: x / z2, charging, status: LineStatus::Closed }
    }

    pub fn series_admittance(&self) -> C64 {
        C64::new(self.g, -self.b)
    }

    pub fn is_closed(&self) -> bool {
        self.status == LineStatus::Closed
    }
}

/// Constant-impedance load, pu on the system base at nominal voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSpec {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

impl LoadSpec {
    pub fn shunt_admittance(&self) -> C64 {
        C64::new(self.p, -self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultShunt {
    pub bus: usize,
    pub conductance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridModel {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<LoadSpec>,
}

impl GridModel {
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn line(&self, id: usize) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    pub fn line_mut(&mut self, id: usize) -> Option<&mut Line> {
        self.lines.iter_mut().find(|l| l.id == id)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        let mut seen = BTreeSet::new();
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(GridError::DuplicateBus(bus.id));
            }
        }
        for line in &self.lines {
            for end in [line.from, line.to] {
                if !seen.contains(&end) {
                    return Err(GridError::DanglingLine { line: line.id, bus: end });
                }
            }
            if line.from == line.to {
                return Err(GridError::SelfLoop { line: line.id, bus: line.from });
            }
            if line.b.abs() < line.g.abs() {
                eprintln!("warning: line {} has |B| < |G| ({} vs {})", line.id, line.b, line.g);
            }
        }
        for load in &self.loads {
            if !seen.contains(&load.bus) {
                return Err(GridError::UnknownBus { what: "load".into(), bus: load.bus });
            }
        }
        Ok(())
    }

    pub fn total_load_p(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }
}

/// Dense bus admittance matrix with the shunt parts kept separately so the
/// power balance can be audited.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub bus_ids: Vec<usize>,
    pub y: DMatrix<C64>,
    pub load_shunt: Vec<C64>,
    pub fault_shunt: Vec<C64>,
    /// Connected components over closed lines, as bus indices.
    pub islands: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn index_of(&self, bus_id: usize) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus_id)
    }

    /// Buses with an all-zero row: nothing attached, no solution defined.
    pub fn isolated_buses(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.y.row(i).iter().all(|v| *v == C64::new(0.0, 0.0)))
            .map(|i| self.bus_ids[i])
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        self.n() > 0 && self.isolated_buses().len() == self.n()
    }
}

pub fn build_admittance(
    buses: &[Bus],
    lines: &[Line],
    loads: &[LoadSpec],
    fault_shunts: &[FaultShunt],
) -> Result<AdmittanceMatrix, GridError> {
    let index: BTreeMap<usize, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    if index.len() != buses.len() {
        let mut seen = BTreeSet::new();
        for b in buses {
            if !seen.insert(b.id) {
                return Err(GridError::DuplicateBus(b.id));
            }
        }
    }
    let n = buses.len();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    let mut load_shunt = vec![C64::new(0.0, 0.0); n];
    let mut fault_shunt = vec![C64::new(0.0, 0.0); n];

    for line in lines {
        let i = *index.get(&line.from).ok_or(GridError::DanglingLine { line: line.id, bus: line.from })?;
        let j = *index.get(&line.to).ok_or(GridError::DanglingLine { line: line.id, bus: line.to })?;
        if i == j {
            return Err(GridError::SelfLoop { line: line.id, bus: line.from });
        }
        if !line.is_closed() {
            continue;
        }
        let ys = line.series_admittance();
        let half = C64::new(0.0, line.charging / 2.0);
        y[(i, i)] += ys + half;
        y[(j, j)] += ys + half;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for load in loads {
        let i = *index.get(&load.bus).ok_or(GridError::UnknownBus { what: "load".into(), bus: load.bus })?;
        load_shunt[i] += load.shunt_admittance();
    }
    for fault in fault_shunts {
        let i = *index.get(&fault.bus).ok_or(GridError::UnknownBus { what: "fault".into(), bus: fault.bus })?;
        fault_shunt[i] += C64::new(fault.conductance, 0.0);
    }
    for i in 0..n {
        y[(i, i)] += load_shunt[i] + fault_shunt[i];
    }

    let islands = detect_islands(buses, lines)
        .into_iter()
        .map(|island| island.into_iter().map(|id| index[&id]).collect())
        .collect();

    Ok(AdmittanceMatrix { bus_ids: buses.iter().map(|b| b.id).collect(), y, load_shunt, fault_shunt, islands })
}

/// Connected components over closed lines. Each island is sorted by bus id
/// and islands are ordered by their smallest id, so the result does not
/// depend on line ordering. Lines with unknown endpoints are ignored here;
/// [`build_admittance`] reports them.
pub fn detect_islands(buses: &[Bus], lines: &[Line]) -> Vec<Vec<usize>> {
    let index: BTreeMap<usize, usize> = buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut parent: Vec<usize> = (0..buses.len()).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    for line in lines.iter().filter(|l| l.is_closed()) {
        if let (Some(&a), Some(&b)) = (index.get(&line.from), index.get(&line.to)) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, bus) in buses.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(bus.id);
    }
    let mut islands: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_unstable();
            g
        })
        .collect();
    islands.sort_by_key(|g| g[0]);
    islands
}

/// Active power transferred from a source at angle `dtheta` ahead of the
/// grid: `V_out V_S (G cos dtheta + B sin dtheta)`.
pub fn injection_power(v_out: f64, v_s: f64, g: f64, b: f64, dtheta: f64) -> f64 {
    v_out * v_s * (g * dtheta.cos() + b * dtheta.sin())
}

/// `d/d(theta)` of [`injection_power`]. A positive value certifies that the
/// injection is locally increasing in the source angle.
pub fn monotonicity_margin(v_out: f64, v_s: f64, g: f64, b: f64, dtheta: f64) -> f64 {
    v_out * v_s * (b * dtheta.cos() - g * dtheta.sin())
}

pub fn is_monotone(margin: f64) -> bool {
    margin > 0.0
}
