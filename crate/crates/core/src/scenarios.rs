//! Measurement sets: noisy draws, missing-measurement masks and the
//! injection-retrievability rule.
//!
//! A missing measurement is an ordinary entry with infinite variance, so every
//! line and bus always has exactly one flow / injection measurement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bp::BpResult;
use crate::factor_graph::FactorGraph;
use crate::grid::{BusId, GridCase, LineId};

/// Default measurement variance (MW²) used throughout the experiments.
pub const DEFAULT_VARIANCE: f64 = 1e-4;

const MASK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("missing fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("measurement variance must be positive, got {0}")]
    BadVariance(f64),
    #[error("measurement csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub z: f64,
    pub variance: f64,
}

impl Measurement {
    pub const MISSING: Measurement = Measurement {
        z: 0.0,
        variance: f64::INFINITY,
    };

    pub fn new(z: f64, variance: f64) -> Self {
        Self { z, variance }
    }

    pub fn is_present(&self) -> bool {
        self.variance.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    pub flow: BTreeMap<LineId, Measurement>,
    pub injection: BTreeMap<BusId, Measurement>,
    pub seed: u64,
}

impl MeasurementSet {
    /// Every line and bus measured exactly (z = truth) with `variance`.
    pub fn exact(case: &GridCase, variance: f64) -> Self {
        Self {
            flow: case
                .lines()
                .iter()
                .map(|l| (l.id, Measurement::new(l.flow_true, variance)))
                .collect(),
            injection: case
                .buses()
                .iter()
                .map(|b| (b.id, Measurement::new(b.injection_true, variance)))
                .collect(),
            seed: 0,
        }
    }

    pub fn flow_present(&self, line: LineId) -> bool {
        self.flow.get(&line).is_some_and(Measurement::is_present)
    }

    pub fn injection_present(&self, bus: BusId) -> bool {
        self.injection.get(&bus).is_some_and(Measurement::is_present)
    }

    pub fn missing_flow_count(&self) -> usize {
        self.flow.values().filter(|m| !m.is_present()).count()
    }

    /// z → λz, σ² → λ²σ² for every measurement.
    pub fn scaled(&self, lambda: f64) -> Self {
        let scale = |m: &Measurement| {
            if m.is_present() {
                Measurement::new(lambda * m.z, lambda * lambda * m.variance)
            } else {
                *m
            }
        };
        Self {
            flow: self.flow.iter().map(|(k, m)| (*k, scale(m))).collect(),
            injection: self.injection.iter().map(|(k, m)| (*k, scale(m))).collect(),
            seed: self.seed,
        }
    }

    /// `kind,id,z,variance` with `inf` for missing measurements.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# seed {}", self.seed).unwrap();
        out.push_str("kind,id,z,variance\n");
        for (id, m) in &self.flow {
            writeln!(out, "flow,{id},{},{}", m.z, m.variance).unwrap();
        }
        for (id, m) in &self.injection {
            writeln!(out, "injection,{id},{},{}", m.z, m.variance).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ScenarioError> {
        let mut set = MeasurementSet::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            if let Some(rest) = raw.strip_prefix('#') {
                if let Some(seed) = rest.trim().strip_prefix("seed") {
                    set.seed = seed.trim().parse().map_err(|_| ScenarioError::Csv {
                        line,
                        message: "bad seed comment".into(),
                    })?;
                }
                continue;
            }
            if raw.starts_with("kind,") {
                continue;
            }
            let bad = |message: &str| ScenarioError::Csv {
                line,
                message: format!("{message}: {raw:?}"),
            };
            let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let z: f64 = fields[2].parse().map_err(|_| bad("bad z"))?;
            let variance: f64 = fields[3].parse().map_err(|_| bad("bad variance"))?;
            if !(variance > 0.0) {
                return Err(bad("variance must be positive or inf"));
            }
            let m = Measurement::new(if variance.is_finite() { z } else { 0.0 }, variance);
            match fields[0] {
                "flow" => {
                    set.flow.insert(fields[1].parse().map_err(|_| bad("bad line id"))?, m);
                }
                "injection" => {
                    set.injection
                        .insert(fields[1].parse().map_err(|_| bad("bad bus id"))?, m);
                }
                _ => return Err(bad("kind must be flow or injection")),
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementStrategy {
    /// Uniformly random flow and injection subsets.
    #[default]
    Uniform,
    /// Injection measurements removed from the least connected buses first.
    LeastConnected,
    /// Injection measurements removed so that Σ_i m_i/c_i stays minimal.
    MinSumMoverC,
}

impl FromStr for PlacementStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "least-connected" => Ok(Self::LeastConnected),
            "min-sum-m-over-c" | "min-m-over-c" => Ok(Self::MinSumMoverC),
            other => Err(format!(
                "unknown strategy {other:?} (uniform, least-connected, min-sum-m-over-c)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingFractions {
    pub flow: f64,
    pub injection: f64,
}

impl MissingFractions {
    pub fn equal(fraction: f64) -> Self {
        Self {
            flow: fraction,
            injection: fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingMask {
    pub missing_flows: BTreeSet<LineId>,
    pub missing_injections: BTreeSet<BusId>,
    pub strategy: PlacementStrategy,
    pub fractions: MissingFractions,
    /// Whether fraction × population was non-integral (flow, injection) and
    /// got rounded half-up.
    pub rounded: (bool, bool),
}

impl MissingMask {
    pub fn none(strategy: PlacementStrategy) -> Self {
        Self {
            missing_flows: BTreeSet::new(),
            missing_injections: BTreeSet::new(),
            strategy,
            fractions: MissingFractions::equal(0.0),
            rounded: (false, false),
        }
    }
}

fn rounded_count(fraction: f64, population: usize) -> (usize, bool) {
    let exact = fraction * population as f64;
    let count = ((exact + 0.5 + 1e-9).floor() as usize).min(population);
    (count, (exact - count as f64).abs() > 1e-9)
}

fn check_fraction(f: f64) -> Result<(), ScenarioError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(ScenarioError::BadFraction(f))
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-bus cost of removing its injection measurement: Σ over incident lines
/// of 1/c_neighbor, as an exact integer multiple of 1/lcm(degrees).
fn removal_costs(case: &GridCase) -> Vec<u64> {
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let n = case.buses().len();
    let lcm = (0..n)
        .map(|b| case.degree(b) as u64)
        .filter(|&d| d > 0)
        .fold(1u64, |acc, d| acc / gcd(acc, d) * d);
    (0..n)
        .map(|b| {
            case.incident_lines(b)
                .iter()
                .map(|&(l, _)| {
                    let (u, v) = case.endpoints(l);
                    let other = if u == b { v } else { u };
                    lcm / case.degree(other) as u64
                })
                .sum()
        })
        .collect()
}

pub fn make_mask(
    case: &GridCase,
    fractions: MissingFractions,
    strategy: PlacementStrategy,
    seed: u64,
) -> Result<MissingMask, ScenarioError> {
    check_fraction(fractions.flow)?;
    check_fraction(fractions.injection)?;
    let mut rng = rng_for(seed, MASK_STREAM);
    let n_lines = case.lines().len();
    let n_buses = case.buses().len();
    let (flow_count, flow_rounded) = rounded_count(fractions.flow, n_lines);
    let (inj_count, inj_rounded) = rounded_count(fractions.injection, n_buses);

    let missing_flows = index::sample(&mut rng, n_lines, flow_count)
        .into_iter()
        .map(|l| case.lines()[l].id)
        .collect();

    let bus_order: Vec<usize> = match strategy {
        PlacementStrategy::Uniform => index::sample(&mut rng, n_buses, inj_count).into_vec(),
        PlacementStrategy::LeastConnected => {
            let mut order: Vec<usize> = (0..n_buses).collect();
            order.sort_by_key(|&b| (case.degree(b), case.buses()[b].id));
            order
        }
        PlacementStrategy::MinSumMoverC => {
            // Removing bus j adds 1/c_i to the sum for every line (i, j); that
            // increment does not depend on earlier removals, so the greedy
            // order is a sort on it.
            let costs = removal_costs(case);
            let mut order: Vec<usize> = (0..n_buses).collect();
            order.sort_by_key(|&b| (costs[b], case.buses()[b].id));
            order
        }
    };
    let missing_injections = bus_order
        .into_iter()
        .take(inj_count)
        .map(|b| case.buses()[b].id)
        .collect();

    Ok(MissingMask {
        missing_flows,
        missing_injections,
        strategy,
        fractions,
        rounded: (flow_rounded, inj_rounded),
    })
}

/// Draws z = truth + N(0, variance) for every measurement not in `mask`.
pub fn sample_measurements(
    case: &GridCase,
    mask: &MissingMask,
    variance: f64,
    seed: u64,
) -> Result<MeasurementSet, ScenarioError> {
    if !(variance > 0.0) || variance.is_infinite() {
        return Err(ScenarioError::BadVariance(variance));
    }
    let sd = variance.sqrt();
    let mut rng = rng_for(seed, NOISE_STREAM);
    let mut draw = |truth: f64| {
        let xi: f64 = StandardNormal.sample(&mut rng);
        Measurement::new(truth + sd * xi, variance)
    };
    let flow = case
        .lines()
        .iter()
        .map(|l| {
            let m = if mask.missing_flows.contains(&l.id) {
                Measurement::MISSING
            } else {
                draw(l.flow_true)
            };
            (l.id, m)
        })
        .collect();
    let injection = case
        .buses()
        .iter()
        .map(|b| {
            let m = if mask.missing_injections.contains(&b.id) {
                Measurement::MISSING
            } else {
                draw(b.injection_true)
            };
            (b.id, m)
        })
        .collect();
    Ok(MeasurementSet {
        flow,
        injection,
        seed,
    })
}

/// A bus injection is retrievable when it is measured directly or when every
/// incident line flow has a finite belief variance.
pub fn injection_retrievable(graph: &FactorGraph, bus: BusId, meas: &MeasurementSet, bp: &BpResult) -> bool {
    if meas.injection_present(bus) {
        return true;
    }
    match graph.injection_factor(bus) {
        Some(f) => graph
            .factor_neighbors(f)
            .all(|(v, _)| bp.beliefs[v].is_finite()),
        None => false,
    }
}
