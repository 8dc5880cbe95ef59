//! Area partitions, inter-area flows and their covariance.
//!
//! The flow from area Y to area Z is the signed sum of the flows on the lines
//! joining them. BP gives the line means but not their cross-covariances;
//! those come from linear response, cov(x_i, x_j) = σ_j² ∂⟨x_i⟩/∂z_j, taken
//! by central differences of the BP means in the direct measurement z_j.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bp::{run_bp, run_bp_warm, BpError, BpOptions, BpResult};
use crate::factor_graph::FactorGraph;
use crate::grid::{BusId, GridCase, LineId};
use crate::wls::{exact_covariance, WlsError};

#[derive(Debug, thiserror::Error)]
pub enum CoarseError {
    #[error("partition: {0}")]
    Partition(String),
    #[error("partition file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {0} has no finite direct flow measurement to perturb")]
    NotMeasured(LineId),
    #[error("line {0} has an infinite belief variance")]
    NotRetrievable(LineId),
    #[error("BP did not converge{}", .line.map(|l| format!(" after perturbing line {l}")).unwrap_or_default())]
    NotConverged { line: Option<LineId> },
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Wls(#[from] WlsError),
    #[error("no connected {0}-area partition found")]
    Infeasible(usize),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub name: String,
    pub area_of: BTreeMap<BusId, String>,
    /// Area labels in first-appearance order.
    pub areas: Vec<String>,
}

impl Partition {
    /// Checks that every bus of `case` is assigned exactly once and that there
    /// are at least two areas.
    pub fn new(name: impl Into<String>, assignments: Vec<(BusId, String)>, case: &GridCase) -> Result<Self, CoarseError> {
        let mut area_of = BTreeMap::new();
        let mut areas: Vec<String> = Vec::new();
        for (bus, area) in assignments {
            if case.bus_index(bus).is_none() {
                return Err(CoarseError::Partition(format!("unknown bus {bus}")));
            }
            if !areas.contains(&area) {
                areas.push(area.clone());
            }
            if area_of.insert(bus, area).is_some() {
                return Err(CoarseError::Partition(format!("bus {bus} assigned twice")));
            }
        }
        if let Some(b) = case.buses().iter().find(|b| !area_of.contains_key(&b.id)) {
            return Err(CoarseError::Partition(format!("bus {} has no area", b.id)));
        }
        if areas.len() < 2 {
            return Err(CoarseError::Partition("at least two areas are required".into()));
        }
        Ok(Self {
            name: name.into(),
            area_of,
            areas,
        })
    }

    pub fn area_index(&self, bus: BusId) -> usize {
        let label = &self.area_of[&bus];
        self.areas.iter().position(|a| a == label).expect("label listed")
    }

    /// Labels of areas whose buses do not form a connected subgraph.
    pub fn disconnected_areas(&self, case: &GridCase) -> Vec<String> {
        let assign: Vec<usize> = case.buses().iter().map(|b| self.area_index(b.id)).collect();
        (0..self.areas.len())
            .filter(|&a| !area_connected(case, &assign, a))
            .map(|a| self.areas[a].clone())
            .collect()
    }

    /// `bus_id area_label` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("# partition {}\n", self.name);
        for (bus, area) in &self.area_of {
            writeln!(out, "{bus} {area}").unwrap();
        }
        out
    }
}

fn area_connected(case: &GridCase, assign: &[usize], area: usize) -> bool {
    let members: Vec<usize> = (0..assign.len()).filter(|&b| assign[b] == area).collect();
    let Some(&start) = members.first() else {
        return false;
    };
    let mut seen = vec![false; assign.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(b) = queue.pop_front() {
        for &(l, _) in case.incident_lines(b) {
            let (u, v) = case.endpoints(l);
            let o = if u == b { v } else { u };
            if assign[o] == area && !seen[o] {
                seen[o] = true;
                count += 1;
                queue.push_back(o);
            }
        }
    }
    count == members.len()
}

pub fn parse_partition(text: &str, name: &str, case: &GridCase) -> Result<Partition, CoarseError> {
    let mut assignments = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.split_whitespace();
        let (Some(bus), Some(area), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(CoarseError::Parse {
                line: i + 1,
                message: format!("expected `bus_id area_label`, got {raw:?}"),
            });
        };
        let bus = bus.parse().map_err(|_| CoarseError::Parse {
            line: i + 1,
            message: format!("bad bus id {bus:?}"),
        })?;
        assignments.push((bus, area.to_string()));
    }
    let partition = Partition::new(name, assignments, case)?;
    let loose = partition.disconnected_areas(case);
    if !loose.is_empty() {
        log::warn!("partition {name}: areas {loose:?} are not connected");
    }
    Ok(partition)
}

pub fn read_partition(path: impl AsRef<Path>, case: &GridCase) -> Result<Partition, CoarseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CoarseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_partition(&text, &name, case)
}

/// Unordered area pairs (i < j) with the lines joining them, signed +1 when
/// the line is oriented from area i to area j.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Boundary {
    pub pairs: Vec<(usize, usize)>,
    /// Per pair: (line index, sign).
    pub lines: Vec<Vec<(usize, f64)>>,
}

impl Boundary {
    pub fn of(partition: &Partition, case: &GridCase) -> Self {
        let assign: Vec<usize> = case.buses().iter().map(|b| partition.area_index(b.id)).collect();
        Self::from_assignment(&assign, partition.areas.len(), case)
    }

    fn from_assignment(assign: &[usize], n_areas: usize, case: &GridCase) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n_areas {
            for j in i + 1..n_areas {
                pairs.push((i, j));
            }
        }
        let mut lines = vec![Vec::new(); pairs.len()];
        for l in 0..case.lines().len() {
            let (u, v) = case.endpoints(l);
            let (a, b) = (assign[u], assign[v]);
            if a == b {
                continue;
            }
            let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
            let p = pairs.iter().position(|&q| q == (lo, hi)).expect("pair listed");
            lines[p].push((l, sign));
        }
        Self { pairs, lines }
    }

    pub fn non_empty_pairs(&self) -> usize {
        self.lines.iter().filter(|l| !l.is_empty()).count()
    }

    /// Lines × pairs matrix of signs.
    fn selection(&self, n_lines: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(n_lines, self.pairs.len());
        for (p, lines) in self.lines.iter().enumerate() {
            for &(l, sign) in lines {
                s[(l, p)] = sign;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaFlows {
    pub boundary: Boundary,
    /// flow(area i → area j) per pair (MW).
    pub flows: Vec<f64>,
    /// false when a boundary line of the pair has infinite belief variance.
    pub available: Vec<bool>,
}

pub fn area_flows(bp: &BpResult, partition: &Partition, case: &GridCase) -> AreaFlows {
    let boundary = Boundary::of(partition, case);
    let mut flows = Vec::with_capacity(boundary.pairs.len());
    let mut available = Vec::with_capacity(boundary.pairs.len());
    for lines in &boundary.lines {
        flows.push(lines.iter().map(|&(l, s)| s * bp.beliefs[l].mean).sum::<f64>() + 0.0);
        available.push(lines.iter().all(|&(l, _)| bp.beliefs[l].is_finite()));
    }
    AreaFlows {
        boundary,
        flows,
        available,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearResponseOptions {
    /// ε_j = epsilon_scale · σ_j.
    pub epsilon_scale: f64,
    /// Stopping rule for the base and perturbed BP runs. Finite differences of
    /// size ~1e-3σ need means converged well below the default tolerance.
    pub bp: BpOptions,
}

impl Default for LinearResponseOptions {
    fn default() -> Self {
        Self {
            epsilon_scale: 1e-3,
            bp: BpOptions {
                tol_mean: 1e-13,
                tol_var: 1e-16,
                ..BpOptions::default()
            },
        }
    }
}

fn converged_base(graph: &FactorGraph, opts: &BpOptions) -> Result<BpResult, CoarseError> {
    let base = run_bp(graph, opts)?;
    if !base.converged {
        return Err(CoarseError::NotConverged { line: None });
    }
    Ok(base)
}

fn response_matrix(
    graph: &FactorGraph,
    base: &BpResult,
    rows: &[usize],
    cols: &[usize],
    opts: &LinearResponseOptions,
) -> Result<DMatrix<f64>, CoarseError> {
    for &v in cols {
        let line = graph.variables()[v].line_id;
        if !graph.factors()[v].variance.is_finite() {
            return Err(CoarseError::NotMeasured(line));
        }
        if !base.beliefs[v].is_finite() {
            return Err(CoarseError::NotRetrievable(line));
        }
    }
    let columns: Vec<Vec<f64>> = cols
        .par_iter()
        .map(|&v| {
            let line = graph.variables()[v].line_id;
            let factor = &graph.factors()[v];
            let eps = opts.epsilon_scale * factor.variance.sqrt();
            let mut means = [Vec::new(), Vec::new()];
            for (k, dz) in [eps, -eps].into_iter().enumerate() {
                let g = graph.with_factor_z(v, factor.z + dz);
                let r = run_bp_warm(&g, &opts.bp, &base.messages)?;
                if !r.converged {
                    return Err(CoarseError::NotConverged { line: Some(line) });
                }
                means[k] = rows.iter().map(|&i| r.beliefs[i].mean).collect();
            }
            Ok(means[0]
                .iter()
                .zip(&means[1])
                .map(|(p, m)| factor.variance * (p - m) / (2.0 * eps))
                .collect())
        })
        .collect::<Result<_, CoarseError>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| columns[j][i]))
}

/// Linear-response covariance of the flows on `lines`; each needs a finite
/// direct measurement and a finite belief.
pub fn linear_response_covariance(
    graph: &FactorGraph,
    lines: &[LineId],
    opts: &LinearResponseOptions,
) -> Result<DMatrix<f64>, CoarseError> {
    let idx: Vec<usize> = lines
        .iter()
        .map(|&l| graph.variable_index(l).ok_or(WlsError::UnknownLine(l)))
        .collect::<Result<_, _>>()?;
    let base = converged_base(graph, &opts.bp)?;
    response_matrix(graph, &base, &idx, &idx, opts)
}

/// Covariance of all line flows in `lines` (variable indices): linear
/// response among directly measured lines, the exact posterior for any entry
/// touching a line without a direct measurement.
fn line_covariance(
    graph: &FactorGraph,
    base: &BpResult,
    lines: &[usize],
    opts: &LinearResponseOptions,
) -> Result<DMatrix<f64>, CoarseError> {
    let n = lines.len();
    let measured: Vec<usize> = (0..n)
        .filter(|&k| graph.factors()[lines[k]].variance.is_finite())
        .collect();
    for &v in lines {
        if !base.beliefs[v].is_finite() {
            return Err(CoarseError::NotRetrievable(graph.variables()[v].line_id));
        }
    }
    let mut k = DMatrix::zeros(n, n);
    let m_idx: Vec<usize> = measured.iter().map(|&k| lines[k]).collect();
    let lr = response_matrix(graph, base, &m_idx, &m_idx, opts)?;
    let lr = (&lr + lr.transpose()) * 0.5;
    for (a, &i) in measured.iter().enumerate() {
        for (b, &j) in measured.iter().enumerate() {
            k[(i, j)] = lr[(a, b)];
        }
    }
    if measured.len() < n {
        let ids: Vec<LineId> = lines.iter().map(|&v| graph.variables()[v].line_id).collect();
        let exact = exact_covariance(graph, &ids)?;
        for i in 0..n {
            for j in 0..n {
                if !measured.contains(&i) || !measured.contains(&j) {
                    k[(i, j)] = exact[(i, j)];
                }
            }
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaFlowReport {
    pub partition: String,
    pub areas: Vec<String>,
    pub flows: AreaFlows,
    /// Pairs × pairs (MW²).
    pub covariance: DMatrix<f64>,
    pub trace: f64,
    /// Per pair, Σ of the boundary lines' own variances (no correlations).
    pub summed_line_variances: Vec<f64>,
}

impl AreaFlowReport {
    /// flow(Y → Z) by area label; antisymmetric by construction.
    pub fn flow(&self, from: &str, to: &str) -> Option<f64> {
        let y = self.areas.iter().position(|a| a == from)?;
        let z = self.areas.iter().position(|a| a == to)?;
        if y == z {
            return Some(0.0);
        }
        let (lo, hi, sign) = if y < z { (y, z, 1.0) } else { (z, y, -1.0) };
        let p = self.flows.boundary.pairs.iter().position(|&q| q == (lo, hi))?;
        Some(sign * self.flows.flows[p] + 0.0)
    }

    fn pair_label(&self, p: usize) -> String {
        let (i, j) = self.flows.boundary.pairs[p];
        format!("{}->{}", self.areas[i], self.areas[j])
    }

    /// `from_area,to_area,flow_mw,std_mw,summed_line_std_mw,available,boundary_lines`
    pub fn flows_csv(&self, graph: &FactorGraph) -> String {
        let mut out = String::from("from_area,to_area,flow_mw,std_mw,summed_line_std_mw,available,boundary_lines\n");
        for (p, &(i, j)) in self.flows.boundary.pairs.iter().enumerate() {
            let lines: Vec<String> = self.flows.boundary.lines[p]
                .iter()
                .map(|&(l, s)| format!("{}:{}", graph.variables()[l].line_id, if s > 0.0 { "+1" } else { "-1" }))
                .collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.areas[i],
                self.areas[j],
                self.flows.flows[p],
                self.covariance[(p, p)].sqrt(),
                self.summed_line_variances[p].sqrt(),
                self.flows.available[p],
                lines.join(";")
            )
            .unwrap();
        }
        out
    }

    /// Square matrix with pair labels as header and first column.
    pub fn covariance_csv(&self) -> String {
        let n = self.flows.boundary.pairs.len();
        let labels: Vec<String> = (0..n).map(|p| self.pair_label(p)).collect();
        let mut out = format!("pair,{}\n", labels.join(","));
        for (p, label) in labels.iter().enumerate() {
            let row: Vec<String> = (0..n).map(|q| self.covariance[(p, q)].to_string()).collect();
            writeln!(out, "{label},{}", row.join(",")).unwrap();
        }
        out
    }
}

pub fn area_flow_covariance(
    graph: &FactorGraph,
    partition: &Partition,
    case: &GridCase,
    opts: &LinearResponseOptions,
) -> Result<AreaFlowReport, CoarseError> {
    let base = converged_base(graph, &opts.bp)?;
    let flows = area_flows(&base, partition, case);
    let boundary_lines: Vec<usize> = flows
        .boundary
        .lines
        .iter()
        .flatten()
        .map(|&(l, _)| l)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = line_covariance(graph, &base, &boundary_lines, opts)?;
    let pos: BTreeMap<usize, usize> = boundary_lines.iter().enumerate().map(|(k, &l)| (l, k)).collect();
    let n_pairs = flows.boundary.pairs.len();
    let mut s = DMatrix::zeros(boundary_lines.len(), n_pairs);
    for (p, lines) in flows.boundary.lines.iter().enumerate() {
        for &(l, sign) in lines {
            s[(pos[&l], p)] = sign;
        }
    }
    let covariance = s.transpose() * &k * &s;
    let summed_line_variances = flows
        .boundary
        .lines
        .iter()
        .map(|lines| lines.iter().map(|&(l, _)| k[(pos[&l], pos[&l])]).sum::<f64>() + 0.0)
        .collect();
    Ok(AreaFlowReport {
        partition: partition.name.clone(),
        areas: partition.areas.clone(),
        trace: covariance.trace(),
        covariance,
        flows,
        summed_line_variances,
    })
}

pub fn partition_score(report: &AreaFlowReport) -> f64 {
    report.trace
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveWeights {
    /// Weight of the trace of the area-flow covariance (per MW²).
    pub trace: f64,
    /// Weight per boundary line.
    pub cut_lines: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            trace: 1.0,
            cut_lines: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnealingOptions {
    pub steps: usize,
    /// Initial temperature relative to the starting objective.
    pub initial_temperature: f64,
    pub cooling: f64,
    /// Candidate moves scored concurrently per step.
    pub batch: usize,
}

impl Default for AnnealingOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            initial_temperature: 0.05,
            cooling: 0.997,
            batch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcceptedMove {
    pub step: usize,
    pub bus: BusId,
    pub from_area: usize,
    pub to_area: usize,
    pub objective: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub best: Partition,
    pub best_objective: f64,
    /// Trace of the best partition's area-flow covariance (MW²).
    pub best_trace: f64,
    pub start: Partition,
    pub start_objective: f64,
    pub moves: Vec<AcceptedMove>,
}

/// Full line covariance for scoring arbitrary partitions.
fn all_line_covariance(graph: &FactorGraph, opts: &LinearResponseOptions) -> Result<DMatrix<f64>, CoarseError> {
    let base = converged_base(graph, &opts.bp)?;
    let all: Vec<usize> = (0..graph.variable_count()).collect();
    line_covariance(graph, &base, &all, opts)
}

fn objective(k: &DMatrix<f64>, assign: &[usize], n_areas: usize, case: &GridCase, w: &ObjectiveWeights) -> (f64, f64) {
    let boundary = Boundary::from_assignment(assign, n_areas, case);
    let s = boundary.selection(case.lines().len());
    let trace = (s.transpose() * k * &s).trace();
    let cut: usize = boundary.lines.iter().map(Vec::len).sum();
    (w.trace * trace + w.cut_lines * cut as f64, trace)
}

/// Connected random partition by simultaneous breadth-first growth from
/// `n_areas` distinct random seeds.
fn random_connected_partition(case: &GridCase, n_areas: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let n = case.buses().len();
    if n_areas < 2 || n_areas > n {
        return None;
    }
    let seeds = rand::seq::index::sample(rng, n, n_areas).into_vec();
    let mut assign = vec![usize::MAX; n];
    let mut frontier: Vec<Vec<usize>> = Vec::with_capacity(n_areas);
    for (a, &s) in seeds.iter().enumerate() {
        assign[s] = a;
        frontier.push(vec![s]);
    }
    let mut remaining = n - n_areas;
    while remaining > 0 {
        let growable: Vec<usize> = (0..n_areas).filter(|&a| !frontier[a].is_empty()).collect();
        let &a = growable.choose(rng)?;
        let idx = rng.random_range(0..frontier[a].len());
        let b = frontier[a][idx];
        let free: Vec<usize> = case
            .incident_lines(b)
            .iter()
            .map(|&(l, _)| {
                let (u, v) = case.endpoints(l);
                if u == b {
                    v
                } else {
                    u
                }
            })
            .filter(|&o| assign[o] == usize::MAX)
            .collect();
        match free.choose(rng) {
            Some(&o) => {
                assign[o] = a;
                frontier[a].push(o);
                remaining -= 1;
            }
            None => {
                frontier[a].swap_remove(idx);
            }
        }
    }
    Some(assign)
}

fn to_partition(name: &str, assign: &[usize], case: &GridCase) -> Partition {
    let n_areas = assign.iter().max().map_or(0, |m| m + 1);
    let areas: Vec<String> = (1..=n_areas).map(|a| format!("A{a}")).collect();
    Partition {
        name: name.to_string(),
        area_of: case
            .buses()
            .iter()
            .zip(assign)
            .map(|(b, &a)| (b.id, areas[a].clone()))
            .collect(),
        areas,
    }
}

/// Simulated annealing over single-bus moves between adjacent areas, keeping
/// every area non-empty and connected. Deterministic for a given seed.
pub fn partition_search(
    case: &GridCase,
    graph: &FactorGraph,
    n_areas: usize,
    weights: &ObjectiveWeights,
    seed: u64,
    anneal: &AnnealingOptions,
    lr: &LinearResponseOptions,
) -> Result<SearchResult, CoarseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = random_connected_partition(case, n_areas, &mut rng).ok_or(CoarseError::Infeasible(n_areas))?;
    if (0..n_areas).any(|a| !area_connected(case, &assign, a)) {
        return Err(CoarseError::Infeasible(n_areas));
    }
    let k = all_line_covariance(graph, lr)?;
    let (mut current, mut current_trace) = objective(&k, &assign, n_areas, case, weights);
    let start = to_partition("start", &assign, case);
    let start_objective = current;
    let mut best = (current, current_trace, assign.clone());
    let mut temperature = anneal.initial_temperature * current.abs().max(f64::MIN_POSITIVE);
    let mut moves = Vec::new();

    for step in 0..anneal.steps {
        // Candidate moves: a bus on an area border goes to a neighbouring area.
        let mut candidates = Vec::with_capacity(anneal.batch);
        for _ in 0..anneal.batch.max(1) * 4 {
            if candidates.len() == anneal.batch.max(1) {
                break;
            }
            let b = rng.random_range(0..assign.len());
            let targets: BTreeSet<usize> = case
                .incident_lines(b)
                .iter()
                .map(|&(l, _)| {
                    let (u, v) = case.endpoints(l);
                    assign[if u == b { v } else { u }]
                })
                .filter(|&a| a != assign[b])
                .collect();
            let Some(&to) = targets.iter().collect::<Vec<_>>().choose(&mut rng) else {
                continue;
            };
            let from = assign[b];
            let mut trial = assign.clone();
            trial[b] = *to;
            if area_connected(case, &trial, from) {
                candidates.push((b, from, *to, trial));
            }
        }
        let thresholds: Vec<f64> = candidates.iter().map(|_| rng.random::<f64>()).collect();
        let scored: Vec<(f64, f64)> = candidates
            .par_iter()
            .map(|(_, _, _, trial)| objective(&k, trial, n_areas, case, weights))
            .collect();
        for ((cand, (obj, trace)), u) in candidates.into_iter().zip(scored).zip(thresholds) {
            let accept = obj <= current || u < ((current - obj) / temperature).exp();
            if accept {
                let (b, from, to, trial) = cand;
                assign = trial;
                current = obj;
                current_trace = trace;
                moves.push(AcceptedMove {
                    step,
                    bus: case.buses()[b].id,
                    from_area: from,
                    to_area: to,
                    objective: obj,
                    temperature,
                });
                if current < best.0 {
                    best = (current, current_trace, assign.clone());
                }
                break;
            }
        }
        temperature *= anneal.cooling;
    }

    Ok(SearchResult {
        best: to_partition("search", &best.2, case),
        best_objective: best.0,
        best_trace: best.1,
        start,
        start_objective,
        moves,
    })
}

/// Random connected `n_areas` partition of `case`, as used for the search's
/// starting state.
pub fn random_partition(case: &GridCase, n_areas: usize, seed: u64) -> Result<Partition, CoarseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_connected_partition(case, n_areas, &mut rng)
        .map(|a| to_partition("random", &a, case))
        .ok_or(CoarseError::Infeasible(n_areas))
}
