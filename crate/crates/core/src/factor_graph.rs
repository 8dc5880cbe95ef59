//! The flows-only factor graph.
//!
//! Variables are line flows, oriented from `from_bus` to `to_bus`. Factor `l`
//! (for `l < L`) is the flow measurement of line `l`; factor `L + b` is the
//! injection measurement of bus `b`, a signed sum of the incident flows.
//! Injections themselves never become variables.
//!
//! Adjacency is stored as an edge list in compressed form: the edges of a
//! factor are contiguous, and each variable keeps the indices of its edges.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use crate::grid::{BusId, GridCase, LineId};
use crate::scenarios::{Measurement, MeasurementSet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("measurement set references unknown line {0}")]
    UnknownLine(LineId),
    #[error("measurement set references unknown bus {0}")]
    UnknownBus(BusId),
    #[error("measurement for {what} has non-positive variance {variance}")]
    BadVariance { what: String, variance: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNode {
    pub line_id: LineId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    FlowMeas { line_id: LineId },
    /// `signs`: +1 if the line leaves the bus, -1 if it enters.
    InjMeas { bus_id: BusId, signs: Vec<(LineId, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNode {
    pub kind: FactorKind,
    pub z: f64,
    /// `inf` for a missing measurement.
    pub variance: f64,
}

impl FactorNode {
    pub fn is_flow(&self) -> bool {
        matches!(self.kind, FactorKind::FlowMeas { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub factor: usize,
    pub var: usize,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variables: Vec<VariableNode>,
    factors: Vec<FactorNode>,
    edges: Vec<Edge>,
    factor_start: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    var_index: HashMap<LineId, usize>,
    bus_factor: HashMap<BusId, usize>,
}

pub fn build_factor_graph(case: &GridCase, meas: &MeasurementSet) -> Result<FactorGraph, GraphError> {
    for id in meas.flow.keys() {
        if case.line_index(*id).is_none() {
            return Err(GraphError::UnknownLine(*id));
        }
    }
    for id in meas.injection.keys() {
        if case.bus_index(*id).is_none() {
            return Err(GraphError::UnknownBus(*id));
        }
    }
    let check = |m: Measurement, what: String| {
        if m.variance > 0.0 {
            Ok(m)
        } else {
            Err(GraphError::BadVariance {
                what,
                variance: m.variance,
            })
        }
    };

    let n_lines = case.lines().len();
    let variables: Vec<VariableNode> = case
        .lines()
        .iter()
        .map(|l| VariableNode { line_id: l.id })
        .collect();
    let mut factors = Vec::with_capacity(n_lines + case.buses().len());
    let mut edges = Vec::with_capacity(3 * n_lines);
    let mut factor_start = Vec::with_capacity(n_lines + case.buses().len() + 1);

    for (l, line) in case.lines().iter().enumerate() {
        let m = meas.flow.get(&line.id).copied().unwrap_or(Measurement::MISSING);
        let m = check(m, format!("line {}", line.id))?;
        factor_start.push(edges.len());
        edges.push(Edge {
            factor: factors.len(),
            var: l,
            sign: 1.0,
        });
        factors.push(FactorNode {
            kind: FactorKind::FlowMeas { line_id: line.id },
            z: m.z,
            variance: m.variance,
        });
    }
    let mut bus_factor = HashMap::with_capacity(case.buses().len());
    for (b, bus) in case.buses().iter().enumerate() {
        let m = meas.injection.get(&bus.id).copied().unwrap_or(Measurement::MISSING);
        let m = check(m, format!("bus {}", bus.id))?;
        factor_start.push(edges.len());
        let f = factors.len();
        let mut signs = Vec::with_capacity(case.degree(b));
        for &(l, sign) in case.incident_lines(b) {
            edges.push(Edge { factor: f, var: l, sign });
            signs.push((case.lines()[l].id, sign));
        }
        bus_factor.insert(bus.id, f);
        factors.push(FactorNode {
            kind: FactorKind::InjMeas { bus_id: bus.id, signs },
            z: m.z,
            variance: m.variance,
        });
    }
    factor_start.push(edges.len());

    let mut var_edges = vec![Vec::with_capacity(3); n_lines];
    for (e, edge) in edges.iter().enumerate() {
        var_edges[edge.var].push(e);
    }
    let var_index = variables.iter().enumerate().map(|(i, v)| (v.line_id, i)).collect();
    Ok(FactorGraph {
        variables,
        factors,
        edges,
        factor_start,
        var_edges,
        var_index,
        bus_factor,
    })
}

impl FactorGraph {
    pub fn variables(&self) -> &[VariableNode] {
        &self.variables
    }

    pub fn factors(&self) -> &[FactorNode] {
        &self.factors
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn variable_count(&self) -> usize {
        self.variables.len()
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn variable_index(&self, line: LineId) -> Option<usize> {
        self.var_index.get(&line).copied()
    }

    /// Factor index of the flow measurement on `line`.
    pub fn flow_factor(&self, line: LineId) -> Option<usize> {
        self.variable_index(line)
    }

    pub fn injection_factor(&self, bus: BusId) -> Option<usize> {
        self.bus_factor.get(&bus).copied()
    }

    pub fn factor_edges(&self, f: usize) -> Range<usize> {
        self.factor_start[f]..self.factor_start[f + 1]
    }

    pub fn variable_edges(&self, v: usize) -> &[usize] {
        &self.var_edges[v]
    }

    /// N(f_a): (variable index, sign) pairs.
    pub fn factor_neighbors(&self, f: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.edges[self.factor_edges(f)].iter().map(|e| (e.var, e.sign))
    }

    /// N(X_i): factor indices.
    pub fn variable_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.var_edges[v].iter().map(|&e| self.edges[e].factor)
    }

    /// Copy of the graph with factor `f`'s measured value replaced.
    pub fn with_factor_z(&self, f: usize, z: f64) -> FactorGraph {
        let mut g = self.clone();
        g.factors[f].z = z;
        g
    }

    /// Copy of the graph with every (z, σ²) mapped through `map`.
    pub fn map_measurements(&self, map: impl Fn(f64, f64) -> (f64, f64)) -> FactorGraph {
        let mut g = self.clone();
        for f in &mut g.factors {
            if f.variance.is_finite() {
                (f.z, f.variance) = map(f.z, f.variance);
            }
        }
        g
    }

    /// Line-oriented debug dump: `VAR <line>`, `FAC flow <line> <z> <var>`,
    /// `FAC inj <bus> <line:+1,line:-1,...> <z> <var>`.
    pub fn debug_export(&self) -> String {
        let mut out = String::new();
        for v in &self.variables {
            writeln!(out, "VAR {}", v.line_id).unwrap();
        }
        for f in &self.factors {
            match &f.kind {
                FactorKind::FlowMeas { line_id } => {
                    writeln!(out, "FAC flow {line_id} {} {}", f.z, f.variance).unwrap();
                }
                FactorKind::InjMeas { bus_id, signs } => {
                    let terms: Vec<String> = signs
                        .iter()
                        .map(|(l, s)| format!("{l}:{}", if *s > 0.0 { "+1" } else { "-1" }))
                        .collect();
                    writeln!(out, "FAC inj {bus_id} {} {} {}", terms.join(","), f.z, f.variance).unwrap();
                }
            }
        }
        out
    }
}
