//! Synchronous Gaussian belief propagation over the flows-only factor graph.
//!
//! Schedule of iteration n (all reads come from iteration n-1, writes go to a
//! second buffer):
//!
//! 1. every variable forms its belief bⁿ from the incoming factor messages and
//!    sends leave-one-out products to its factors;
//! 2. every injection factor answers with the sum rule.
//!
//! A flow-measurement factor is unary, so its message is the measurement
//! itself and is in place before the first sweep. Injection-factor messages
//! start uninformative. `first_finite_iter` is the first n whose bⁿ has
//! finite variance: 1 for directly measured lines, ≥ 2 for everything that is
//! only reachable through injections.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::factor_graph::FactorGraph;
use crate::gaussian::{linear_sum_message, Gaussian1D, PrecisionAccumulator};
use crate::grid::LineId;
use crate::scenarios::MeasurementSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpOptions {
    pub max_iterations: usize,
    /// Bound on Σ|Δμ| over finite beliefs (MW).
    pub tol_mean: f64,
    /// Bound on Σ|Δσ²| over finite beliefs (MW²).
    pub tol_var: f64,
    /// 0 = plain updates; d ∈ (0, 1) keeps a fraction d of the previous
    /// message (in precision and mean).
    pub damping: f64,
    pub record_trace: bool,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tol_mean: 1e-10,
            tol_var: 1e-10,
            damping: 0.0,
            record_trace: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BpError {
    #[error("invalid BP options: {0}")]
    InvalidOptions(String),
    #[error("NaN in BP messages at iteration {iteration}")]
    Numerical { iteration: usize },
    #[error("warm-start message vector has length {got}, graph has {expected} edges")]
    WarmStartShape { got: usize, expected: usize },
}

impl BpOptions {
    pub fn validate(&self) -> Result<(), BpError> {
        if !(self.tol_mean > 0.0 && self.tol_var > 0.0) {
            return Err(BpError::InvalidOptions("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(BpError::InvalidOptions(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        if self.max_iterations == 0 {
            return Err(BpError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub sum_delta_mean: f64,
    pub sum_delta_var: f64,
    pub finite_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult {
    /// Line id of each variable, in graph order.
    pub line_ids: Vec<LineId>,
    pub beliefs: Vec<Gaussian1D>,
    pub first_finite_iter: Vec<Option<usize>>,
    pub converged: bool,
    pub iterations: usize,
    /// Factor-to-variable messages per graph edge at exit; usable as a warm start.
    pub messages: Vec<Gaussian1D>,
    pub trace: Vec<TraceRow>,
}

impl BpResult {
    pub fn belief(&self, line: LineId) -> Option<Gaussian1D> {
        self.line_ids
            .iter()
            .position(|&l| l == line)
            .map(|i| self.beliefs[i])
    }

    pub fn retrievable_count(&self) -> usize {
        self.beliefs.iter().filter(|b| b.is_finite()).count()
    }
}

fn initial_messages(graph: &FactorGraph) -> Vec<Gaussian1D> {
    let mut msgs = vec![Gaussian1D::UNINFORMATIVE; graph.edges().len()];
    for (f, factor) in graph.factors().iter().enumerate() {
        if factor.is_flow() {
            for e in graph.factor_edges(f) {
                msgs[e] = linear_sum_message(factor.z, factor.variance, graph.edges()[e].sign, []);
            }
        }
    }
    msgs
}

pub fn run_bp(graph: &FactorGraph, opts: &BpOptions) -> Result<BpResult, BpError> {
    run_from(graph, opts, initial_messages(graph))
}

/// Starts from previously converged factor messages (for instance of the same
/// graph with one measured value changed). Flow-factor messages are reset to
/// the current measurements. `first_finite_iter` is then relative to the warm
/// start and carries no depth meaning.
pub fn run_bp_warm(graph: &FactorGraph, opts: &BpOptions, messages: &[Gaussian1D]) -> Result<BpResult, BpError> {
    if messages.len() != graph.edges().len() {
        return Err(BpError::WarmStartShape {
            got: messages.len(),
            expected: graph.edges().len(),
        });
    }
    let mut msgs = messages.to_vec();
    let fresh = initial_messages(graph);
    for (f, factor) in graph.factors().iter().enumerate() {
        if factor.is_flow() {
            for e in graph.factor_edges(f) {
                msgs[e] = fresh[e];
            }
        }
    }
    run_from(graph, opts, msgs)
}

fn damp(old: Gaussian1D, new: Gaussian1D, d: f64) -> Gaussian1D {
    if d == 0.0 || !old.is_finite() || !new.is_finite() {
        return new;
    }
    let precision = (1.0 - d) / new.variance + d / old.variance;
    Gaussian1D {
        mean: (1.0 - d) * new.mean + d * old.mean,
        variance: 1.0 / precision,
    }
}

fn run_from(graph: &FactorGraph, opts: &BpOptions, mut fv: Vec<Gaussian1D>) -> Result<BpResult, BpError> {
    opts.validate()?;
    let n_vars = graph.variable_count();
    let edges = graph.edges();
    let mut vf = vec![Gaussian1D::UNINFORMATIVE; edges.len()];
    let mut next = fv.clone();
    let mut beliefs = vec![Gaussian1D::UNINFORMATIVE; n_vars];
    let mut prev = beliefs.clone();
    let mut first_finite = vec![None; n_vars];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let injection_factors: Vec<usize> = (0..graph.factor_count())
        .filter(|&f| !graph.factors()[f].is_flow())
        .collect();

    for n in 1..=opts.max_iterations {
        iterations = n;
        std::mem::swap(&mut prev, &mut beliefs);

        // Variable step.
        for v in 0..n_vars {
            let incident = graph.variable_edges(v);
            let mut acc = PrecisionAccumulator::default();
            for &e in incident {
                acc.push(&fv[e]);
            }
            let b = acc.finish();
            if b.has_nan() {
                return Err(BpError::Numerical { iteration: n });
            }
            beliefs[v] = b;
            if b.is_finite() && first_finite[v].is_none() {
                first_finite[v] = Some(n);
            }
            for &e in incident {
                let mut out = PrecisionAccumulator::default();
                for &o in incident {
                    if o != e {
                        out.push(&fv[o]);
                    }
                }
                vf[e] = out.finish();
            }
        }

        let mut sum_dm = 0.0;
        let mut sum_dv = 0.0;
        let mut same_support = true;
        let mut finite_count = 0;
        for (b, p) in beliefs.iter().zip(&prev) {
            match (b.is_finite(), p.is_finite()) {
                (true, true) => {
                    sum_dm += (b.mean - p.mean).abs();
                    sum_dv += (b.variance - p.variance).abs();
                }
                (false, false) => {}
                _ => same_support = false,
            }
            finite_count += usize::from(b.is_finite());
        }
        if opts.record_trace {
            trace.push(TraceRow {
                iteration: n,
                sum_delta_mean: if same_support { sum_dm } else { f64::INFINITY },
                sum_delta_var: if same_support { sum_dv } else { f64::INFINITY },
                finite_count,
            });
        }
        if n >= 2 && same_support && sum_dm < opts.tol_mean && sum_dv < opts.tol_var {
            converged = true;
            break;
        }
        if n == opts.max_iterations {
            break;
        }

        // Factor step.
        for &f in &injection_factors {
            let factor = &graph.factors()[f];
            let range = graph.factor_edges(f);
            for e in range.clone() {
                let msg = if factor.variance.is_infinite() {
                    Gaussian1D::UNINFORMATIVE
                } else {
                    let others = range
                        .clone()
                        .filter(|&o| o != e)
                        .map(|o| (edges[o].sign, vf[o]));
                    linear_sum_message(factor.z, factor.variance, edges[e].sign, others)
                };
                let msg = damp(fv[e], msg, opts.damping);
                if msg.has_nan() {
                    return Err(BpError::Numerical { iteration: n });
                }
                next[e] = msg;
            }
        }
        for &f in &injection_factors {
            for e in graph.factor_edges(f) {
                fv[e] = next[e];
            }
        }
    }

    Ok(BpResult {
        line_ids: graph.variables().iter().map(|v| v.line_id).collect(),
        beliefs,
        first_finite_iter: first_finite,
        converged,
        iterations,
        messages: fv,
        trace,
    })
}

/// Cumulative R(n): number of lines without a direct flow measurement whose
/// belief is finite by iteration n, for n = 1 ..= deepest such line.
pub fn retrieval_profile(result: &BpResult, meas: &MeasurementSet) -> BTreeMap<usize, usize> {
    let depths: Vec<usize> = result
        .line_ids
        .iter()
        .zip(&result.first_finite_iter)
        .filter(|(l, _)| !meas.flow_present(**l))
        .filter_map(|(_, d)| *d)
        .collect();
    let deepest = depths.iter().copied().max().unwrap_or(0);
    (1..=deepest)
        .map(|n| (n, depths.iter().filter(|&&d| d <= n).count()))
        .collect()
}

/// `iteration,sum_delta_mean,sum_delta_var,finite_count`
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("iteration,sum_delta_mean,sum_delta_var,finite_count\n");
    for r in trace {
        writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.sum_delta_mean, r.sum_delta_var, r.finite_count
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::build_factor_graph;
    use crate::grid::{Bus, GridCase, Line};
    use crate::scenarios::Measurement;

    fn bus(id: u32) -> Bus {
        Bus {
            id,
            angle: 0.0,
            injection_true: 0.0,
            scheduled_injection: None,
        }
    }

    fn line(id: u32, from_bus: u32, to_bus: u32) -> Line {
        Line {
            id,
            from_bus,
            to_bus,
            susceptance: 1.0,
            flow_true: 0.0,
        }
    }

    fn path(n: u32) -> GridCase {
        GridCase::new(
            "path",
            100.0,
            (1..=n + 1).map(bus).collect(),
            (1..=n).map(|i| line(i, i, i + 1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_missing_stays_uninformative() {
        let case = path(4);
        let g = build_factor_graph(&case, &MeasurementSet::default()).unwrap();
        let r = run_bp(&g, &BpOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.beliefs.iter().all(|b| !b.is_finite()));
        assert!(r.first_finite_iter.iter().all(Option::is_none));
    }

    #[test]
    fn depth_grows_along_a_path() {
        // Only line 1 is measured directly; every bus injection is measured,
        // so line k is reached through k-1 injection factors.
        let case = path(4);
        let mut meas = MeasurementSet::default();
        meas.flow.insert(1, Measurement::new(5.0, 1e-4));
        for b in 1..=5 {
            meas.injection.insert(b, Measurement::new(0.0, 1e-4));
        }
        let g = build_factor_graph(&case, &meas).unwrap();
        let r = run_bp(&g, &BpOptions::default()).unwrap();
        assert!(r.converged);
        // Leaf bus 5 carries a degree-1 injection factor, which reaches line 4
        // after one factor step; line 3 needs one more sweep from either side.
        assert_eq!(r.first_finite_iter, vec![Some(1), Some(2), Some(3), Some(2)]);
        let profile = retrieval_profile(&r, &meas);
        assert_eq!(profile, BTreeMap::from([(1, 0), (2, 2), (3, 3)]));
    }

    #[test]
    fn profile_empty_when_fully_measured() {
        let case = path(3);
        let meas = MeasurementSet::exact(&case, 1e-4);
        let r = run_bp(&build_factor_graph(&case, &meas).unwrap(), &BpOptions::default()).unwrap();
        assert!(retrieval_profile(&r, &meas).is_empty());
        assert!(r.first_finite_iter.iter().all(|d| *d == Some(1)));
    }

    #[test]
    fn trace_records_every_sweep() {
        let case = path(3);
        let meas = MeasurementSet::exact(&case, 1e-4);
        let opts = BpOptions {
            record_trace: true,
            ..BpOptions::default()
        };
        let r = run_bp(&build_factor_graph(&case, &meas).unwrap(), &opts).unwrap();
        assert_eq!(r.trace.len(), r.iterations);
        let csv = trace_csv(&r.trace);
        assert!(csv.starts_with("iteration,sum_delta_mean,sum_delta_var,finite_count\n1,"));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let case = path(6);
        let meas = MeasurementSet::exact(&case, 1e-4);
        let g = build_factor_graph(&case, &meas).unwrap();
        let opts = BpOptions {
            max_iterations: 2,
            ..BpOptions::default()
        };
        let r = run_bp(&g, &opts).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn rejects_bad_options() {
        let case = path(1);
        let g = build_factor_graph(&case, &MeasurementSet::default()).unwrap();
        for opts in [
            BpOptions {
                damping: 1.0,
                ..BpOptions::default()
            },
            BpOptions {
                tol_mean: 0.0,
                ..BpOptions::default()
            },
        ] {
            assert!(matches!(run_bp(&g, &opts), Err(BpError::InvalidOptions(_))));
        }
    }

    #[test]
    fn nan_measurement_is_a_numerical_error() {
        let case = path(2);
        let mut meas = MeasurementSet::exact(&case, 1e-4);
        meas.injection.insert(2, Measurement::new(f64::NAN, 1e-4));
        let g = build_factor_graph(&case, &meas).unwrap();
        assert_eq!(
            run_bp(&g, &BpOptions::default()),
            Err(BpError::Numerical { iteration: 1 })
        );
    }

    #[test]
    fn damping_keeps_the_fixed_point() {
        let case = crate::cases::ieee("ieee14");
        let meas = MeasurementSet::exact(&case, 1e-4);
        let g = build_factor_graph(&case, &meas).unwrap();
        let plain = run_bp(&g, &BpOptions::default()).unwrap();
        let damped = run_bp(
            &g,
            &BpOptions {
                damping: 0.5,
                ..BpOptions::default()
            },
        )
        .unwrap();
        assert!(plain.converged && damped.converged);
        for (a, b) in plain.beliefs.iter().zip(&damped.beliefs) {
            assert!((a.mean - b.mean).abs() < 1e-8);
            // Both runs stop once Σ|Δσ²| < 1e-10, so that is the agreement to expect.
            assert!((a.variance - b.variance).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_reconverges_quickly() {
        let case = crate::cases::ieee("ieee30");
        let meas = MeasurementSet::exact(&case, 1e-4);
        let g = build_factor_graph(&case, &meas).unwrap();
        let cold = run_bp(&g, &BpOptions::default()).unwrap();
        let warm = run_bp_warm(&g, &BpOptions::default(), &cold.messages).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations < cold.iterations);
        assert!(matches!(
            run_bp_warm(&g, &BpOptions::default(), &[]),
            Err(BpError::WarmStartShape { .. })
        ));
    }
}
