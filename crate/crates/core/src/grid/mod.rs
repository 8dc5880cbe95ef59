//! Transmission-grid model: buses, oriented lines and the DC ground truth.
//!
//! A [`GridCase`] is immutable once built. Flows and injections are stored in
//! MW; susceptances in per-unit on the case's MVA base.

mod cdf;
mod snapshot;

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

pub use cdf::{import_cdf, import_cdf_with, parse_cdf, ImportOptions, ParallelLines};
pub use snapshot::{parse_snapshot, read_snapshot, write_snapshot};

pub type BusId = u32;
pub type LineId = u32;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line_id} references unknown bus {bus}")]
    DanglingEndpoint { line_id: LineId, bus: BusId },
    #[error("line {line_id} connects bus {bus} to itself")]
    SelfLoop { line_id: LineId, bus: BusId },
    #[error("line {line_id} has zero or missing reactance")]
    ZeroReactance { line_id: LineId },
    #[error("line {line_id} has non-finite susceptance {value}")]
    BadSusceptance { line_id: LineId, value: f64 },
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("duplicate line id {0}")]
    DuplicateLine(LineId),
    #[error("bus {0} has a non-finite angle")]
    BadAngle(BusId),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: BusId,
    /// Solved voltage angle in radians.
    pub angle: f64,
    /// Net injection implied by the DC flows (MW). Zero until
    /// [`GridCase::derive_dc_state`] has run.
    pub injection_true: f64,
    /// Generation minus load as listed in the source file, when known (MW).
    pub scheduled_injection: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Line {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// 1/x in per-unit. Negative for series-compensated branches.
    pub susceptance: f64,
    /// DC flow from `from_bus` to `to_bus` (MW).
    pub flow_true: f64,
}

/// Origin of a line produced by merging parallel circuits at import.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedCircuits {
    pub line_id: LineId,
    pub circuits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    merged: Vec<MergedCircuits>,
    bus_index: HashMap<BusId, usize>,
    line_index: HashMap<LineId, usize>,
    /// Per bus index: (line index, +1 if the line leaves the bus, -1 if it enters).
    incidence: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyStats {
    pub bus_count: usize,
    pub line_count: usize,
    pub component_count: usize,
    pub loop_count: usize,
    /// degree -> number of buses with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
}

impl GridCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        lines: Vec<Line>,
    ) -> Result<Self, GridError> {
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if !bus.angle.is_finite() {
                return Err(GridError::BadAngle(bus.id));
            }
            if bus_index.insert(bus.id, i).is_some() {
                return Err(GridError::DuplicateBus(bus.id));
            }
        }
        let mut line_index = HashMap::with_capacity(lines.len());
        let mut incidence = vec![Vec::new(); buses.len()];
        for (l, line) in lines.iter().enumerate() {
            if line_index.insert(line.id, l).is_some() {
                return Err(GridError::DuplicateLine(line.id));
            }
            if line.from_bus == line.to_bus {
                return Err(GridError::SelfLoop {
                    line_id: line.id,
                    bus: line.from_bus,
                });
            }
            if line.susceptance == 0.0 {
                return Err(GridError::ZeroReactance { line_id: line.id });
            }
            if !line.susceptance.is_finite() {
                return Err(GridError::BadSusceptance {
                    line_id: line.id,
                    value: line.susceptance,
                });
            }
            for (bus, sign) in [(line.from_bus, 1.0), (line.to_bus, -1.0)] {
                let b = *bus_index.get(&bus).ok_or(GridError::DanglingEndpoint {
                    line_id: line.id,
                    bus,
                })?;
                incidence[b].push((l, sign));
            }
        }
        Ok(Self {
            name: name.into(),
            base_mva,
            buses,
            lines,
            merged: Vec::new(),
            bus_index,
            line_index,
            incidence,
        })
    }

    pub(crate) fn with_merged(mut self, merged: Vec<MergedCircuits>) -> Self {
        self.merged = merged;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn merged_circuits(&self) -> &[MergedCircuits] {
        &self.merged
    }

    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn line_index(&self, id: LineId) -> Option<usize> {
        self.line_index.get(&id).copied()
    }

    /// Lines touching bus `bus_idx` with their orientation sign relative to it.
    pub fn incident_lines(&self, bus_idx: usize) -> &[(usize, f64)] {
        &self.incidence[bus_idx]
    }

    pub fn degree(&self, bus_idx: usize) -> usize {
        self.incidence[bus_idx].len()
    }

    /// Bus indices of both endpoints of line `line_idx`.
    pub fn endpoints(&self, line_idx: usize) -> (usize, usize) {
        let line = &self.lines[line_idx];
        (self.bus_index[&line.from_bus], self.bus_index[&line.to_bus])
    }

    /// Fills `flow_true` and `injection_true` from the bus angles.
    ///
    /// flow = base_mva · b · (θ_from − θ_to); injection = outflow − inflow.
    pub fn derive_dc_state(&self) -> GridCase {
        let mut case = self.clone();
        for line in &mut case.lines {
            let from = &self.buses[self.bus_index[&line.from_bus]];
            let to = &self.buses[self.bus_index[&line.to_bus]];
            line.flow_true = self.base_mva * line.susceptance * (from.angle - to.angle);
        }
        let mut total = 0.0;
        let mut scale = 0.0_f64;
        for (b, bus) in case.buses.iter_mut().enumerate() {
            bus.injection_true = self.incidence[b]
                .iter()
                .map(|&(l, sign)| sign * case.lines[l].flow_true)
                .sum();
            total += bus.injection_true;
            scale = scale.max(bus.injection_true.abs());
        }
        if total.abs() > 1e-6 * self.base_mva.max(scale) {
            log::warn!(
                "{}: total DC injection imbalance {total:.3e} MW",
                self.name
            );
        }
        case
    }

    /// Connected-component label per bus index; labels are 0.. in order of
    /// the lowest bus index they contain.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.buses.len()];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.buses.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(b) = queue.pop_front() {
                for &(l, _) in &self.incidence[b] {
                    let (u, v) = self.endpoints(l);
                    let other = if u == b { v } else { u };
                    if label[other] == usize::MAX {
                        label[other] = next;
                        queue.push_back(other);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn topology_stats(&self) -> TopologyStats {
        let component_count = self.components().iter().max().map_or(0, |m| m + 1);
        let mut degree_histogram = BTreeMap::new();
        for b in 0..self.buses.len() {
            *degree_histogram.entry(self.degree(b)).or_insert(0) += 1;
        }
        TopologyStats {
            bus_count: self.buses.len(),
            line_count: self.lines.len(),
            component_count,
            loop_count: self.lines.len() + component_count - self.buses.len(),
            degree_histogram,
        }
    }

    /// Restricts the case to a subset of its lines (by index), keeping all buses.
    pub fn with_lines(&self, keep: &[usize]) -> GridCase {
        let lines = keep.iter().map(|&l| self.lines[l].clone()).collect();
        GridCase::new(self.name.clone(), self.base_mva, self.buses.clone(), lines)
            .expect("subset of a valid case is valid")
    }

    /// A uniformly shuffled Kruskal spanning forest of the case.
    pub fn random_spanning_tree<R: Rng + ?Sized>(&self, rng: &mut R) -> GridCase {
        let mut order: Vec<usize> = (0..self.lines.len()).collect();
        order.shuffle(rng);
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut keep = Vec::with_capacity(self.buses.len());
        for l in order {
            let (u, v) = self.endpoints(l);
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
                keep.push(l);
            }
        }
        keep.sort_unstable();
        self.with_lines(&keep)
    }
}
