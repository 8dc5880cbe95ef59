//! Monte-Carlo ensembles over random measurement masks.
//!
//! Sample k of an ensemble uses seed `base_seed + k` for both its mask and its
//! noise, and per-sample statistics are aggregated in sample order, so results
//! do not depend on the number of workers.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{run_bp, BpError, BpOptions};
use crate::factor_graph::{build_factor_graph, GraphError};
use crate::grid::GridCase;
use crate::scenarios::{
    injection_retrievable, make_mask, sample_measurements, MissingFractions, PlacementStrategy, ScenarioError,
    DEFAULT_VARIANCE,
};
use crate::wls::wls_flows;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("BP failed on the sample with seed {seed}")]
    Bp {
        seed: u64,
        #[source]
        source: BpError,
    },
    #[error("ensemble needs at least one sample")]
    NoSamples,
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_samples: usize,
    pub fractions: Vec<MissingFractions>,
    pub strategy: PlacementStrategy,
    pub variance: f64,
    pub base_seed: u64,
    /// 0 = one worker per available core.
    pub workers: usize,
    pub bp: BpOptions,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            fractions: Vec::new(),
            strategy: PlacementStrategy::Uniform,
            variance: DEFAULT_VARIANCE,
            base_seed: 0,
            workers: 0,
            bp: BpOptions::default(),
        }
    }
}

/// A mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            se: (var / n).sqrt(),
        }
    }
}

/// Per-sample statistics; everything an ensemble row aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub converged: bool,
    pub iterations: usize,
    pub observable: bool,
    /// Retrievable data items (line flows + bus injections) over all items.
    pub retrievable_fraction: f64,
    /// Σ c_i δ_i/N − Σ c_i Σ δ_i/N²
    pub c_term: f64,
    /// Same with m_i/c_i in place of c_i.
    pub m_term: f64,
    /// Σ (m_i/c_i) c_i/N − Σ m_i/c_i Σ c_i/N², zero in expectation.
    pub k_term: f64,
    /// Lines without direct measurement retrieved at each depth (index = depth).
    pub depth_counts: Vec<usize>,
    /// Per depth over all retrievable lines: (Σ belief variance, count).
    pub depth_variance: Vec<(f64, usize)>,
}

/// Connectivity data shared by all samples of a case.
struct CaseContext {
    degree: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl CaseContext {
    fn new(case: &GridCase) -> Self {
        let n = case.buses().len();
        let neighbors = (0..n)
            .map(|b| {
                case.incident_lines(b)
                    .iter()
                    .map(|&(l, _)| {
                        let (u, v) = case.endpoints(l);
                        if u == b {
                            v
                        } else {
                            u
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            degree: (0..n).map(|b| case.degree(b) as f64).collect(),
            neighbors,
        }
    }
}

fn covariance_term(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let cross: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    cross / n - a.iter().sum::<f64>() * b.iter().sum::<f64>() / (n * n)
}

pub fn run_sample(
    case: &GridCase,
    fractions: MissingFractions,
    strategy: PlacementStrategy,
    variance: f64,
    seed: u64,
    bp: &BpOptions,
) -> Result<SampleStats, ExperimentError> {
    sample_with(case, &CaseContext::new(case), fractions, strategy, variance, seed, bp)
}

fn sample_with(
    case: &GridCase,
    ctx: &CaseContext,
    fractions: MissingFractions,
    strategy: PlacementStrategy,
    variance: f64,
    seed: u64,
    bp: &BpOptions,
) -> Result<SampleStats, ExperimentError> {
    let mask = make_mask(case, fractions, strategy, seed)?;
    let meas = sample_measurements(case, &mask, variance, seed)?;
    let graph = build_factor_graph(case, &meas)?;
    let result = run_bp(&graph, bp).map_err(|source| ExperimentError::Bp { seed, source })?;

    let lines_ok = result.retrievable_count();
    let delta: Vec<f64> = case
        .buses()
        .iter()
        .map(|b| f64::from(u8::from(!injection_retrievable(&graph, b.id, &meas, &result))))
        .collect();
    let buses_ok = delta.iter().filter(|&&d| d == 0.0).count();
    let total = case.lines().len() + case.buses().len();

    let missing_inj: Vec<bool> = case.buses().iter().map(|b| !meas.injection_present(b.id)).collect();
    let w: Vec<f64> = (0..case.buses().len())
        .map(|b| {
            let c = ctx.degree[b];
            if c == 0.0 {
                0.0
            } else {
                ctx.neighbors[b].iter().filter(|&&o| missing_inj[o]).count() as f64 / c
            }
        })
        .collect();

    let mut depth_counts = Vec::new();
    let mut depth_variance: Vec<(f64, usize)> = Vec::new();
    for ((line, belief), depth) in case.lines().iter().zip(&result.beliefs).zip(&result.first_finite_iter) {
        let Some(d) = *depth else { continue };
        if depth_variance.len() <= d {
            depth_variance.resize(d + 1, (0.0, 0));
            depth_counts.resize(d + 1, 0);
        }
        depth_variance[d].0 += belief.variance;
        depth_variance[d].1 += 1;
        if !meas.flow_present(line.id) {
            depth_counts[d] += 1;
        }
    }

    Ok(SampleStats {
        converged: result.converged,
        iterations: result.iterations,
        observable: lines_ok + buses_ok == total,
        retrievable_fraction: (lines_ok + buses_ok) as f64 / total as f64,
        c_term: covariance_term(&ctx.degree, &delta),
        m_term: covariance_term(&w, &delta),
        k_term: covariance_term(&w, &ctx.degree),
        depth_counts,
        depth_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    pub depth: usize,
    pub count: usize,
    pub mean_variance: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub fractions: MissingFractions,
    pub samples: usize,
    pub converged: usize,
    pub mean_iterations: f64,
    pub p_observable: Estimate,
    pub p_retrievable: Estimate,
    /// `None` when P or p is 0 or 1.
    pub n_eff: Option<Estimate>,
    pub c: Estimate,
    pub m: Estimate,
    pub k: Estimate,
    /// (n, ⟨R(n)⟩/⟨R(∞)⟩) over converged samples, n = 1 ..= deepest.
    pub r_profile: Vec<(usize, f64)>,
    /// Mean converged belief variance per retrieval depth over all retrievable
    /// lines, relative to depth 1.
    pub variance_ratio: Vec<DepthRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub case: String,
    pub spec: EnsembleSpec,
    pub rows: Vec<FractionRow>,
}

/// N_eff = ln P / ln p, with a delta-method standard error that includes the
/// sample covariance of the two estimators.
pub fn effective_dof(p_obs: f64, p_ret: f64, var_obs: f64, var_ret: f64, cov: f64) -> Option<Estimate> {
    if !(p_obs > 0.0 && p_obs < 1.0 && p_ret > 0.0 && p_ret < 1.0) {
        return None;
    }
    let (lp, lq) = (p_obs.ln(), p_ret.ln());
    let value = lp / lq;
    let d_obs = 1.0 / (p_obs * lq);
    let d_ret = -lp / (p_ret * lq * lq);
    let var = d_obs * d_obs * var_obs + d_ret * d_ret * var_ret + 2.0 * d_obs * d_ret * cov;
    Some(Estimate {
        value,
        se: var.max(0.0).sqrt(),
    })
}

fn aggregate(fractions: MissingFractions, stats: &[SampleStats]) -> FractionRow {
    let n = stats.len() as f64;
    let obs: Vec<f64> = stats.iter().map(|s| f64::from(u8::from(s.observable))).collect();
    let ret: Vec<f64> = stats.iter().map(|s| s.retrievable_fraction).collect();
    let p_observable = {
        let p = obs.iter().sum::<f64>() / n;
        Estimate {
            value: p,
            se: (p * (1.0 - p) / n).sqrt(),
        }
    };
    let p_retrievable = Estimate::from_samples(&ret);
    let cov = obs
        .iter()
        .zip(&ret)
        .map(|(o, r)| (o - p_observable.value) * (r - p_retrievable.value))
        .sum::<f64>()
        / (n - 1.0).max(1.0)
        / n;
    let n_eff = effective_dof(
        p_observable.value,
        p_retrievable.value,
        p_observable.se.powi(2),
        p_retrievable.se.powi(2),
        cov,
    );
    let pick = |f: fn(&SampleStats) -> f64| Estimate::from_samples(&stats.iter().map(f).collect::<Vec<_>>());

    let converged: Vec<&SampleStats> = stats.iter().filter(|s| s.converged).collect();
    let deepest = converged.iter().map(|s| s.depth_counts.len()).max().unwrap_or(0);
    let mut r_counts = vec![0usize; deepest];
    let mut var_sums = vec![(0.0, 0usize); deepest];
    for s in &converged {
        for (d, &c) in s.depth_counts.iter().enumerate() {
            r_counts[d] += c;
        }
        for (d, &(v, c)) in s.depth_variance.iter().enumerate() {
            var_sums[d].0 += v;
            var_sums[d].1 += c;
        }
    }
    let r_inf: usize = r_counts.iter().sum();
    let mut r_profile = Vec::new();
    if r_inf > 0 {
        let mut cum = 0;
        for (d, &c) in r_counts.iter().enumerate().skip(1) {
            cum += c;
            r_profile.push((d, cum as f64 / r_inf as f64));
        }
    }
    let mut variance_ratio = Vec::new();
    if let Some(&(v1, c1)) = var_sums.get(1).filter(|(_, c)| *c > 0) {
        let base = v1 / c1 as f64;
        for (d, &(v, c)) in var_sums.iter().enumerate().skip(1) {
            if c > 0 {
                let mean_variance = v / c as f64;
                variance_ratio.push(DepthRow {
                    depth: d,
                    count: c,
                    mean_variance,
                    ratio: mean_variance / base,
                });
            }
        }
    }

    FractionRow {
        fractions,
        samples: stats.len(),
        converged: converged.len(),
        mean_iterations: stats.iter().map(|s| s.iterations as f64).sum::<f64>() / n,
        p_observable,
        p_retrievable,
        n_eff,
        c: pick(|s| s.c_term),
        m: pick(|s| s.m_term),
        k: pick(|s| s.k_term),
        r_profile,
        variance_ratio,
    }
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    Ok(pool.install(job))
}

pub fn run_ensemble(case: &GridCase, spec: &EnsembleSpec) -> Result<EnsembleResult, ExperimentError> {
    if spec.n_samples == 0 {
        return Err(ExperimentError::NoSamples);
    }
    let ctx = CaseContext::new(case);
    let mut rows = Vec::with_capacity(spec.fractions.len());
    for &fr in &spec.fractions {
        let stats: Vec<SampleStats> = with_pool(spec.workers, || {
            (0..spec.n_samples as u64)
                .into_par_iter()
                .map(|k| {
                    sample_with(case, &ctx, fr, spec.strategy, spec.variance, spec.base_seed + k, &spec.bp)
                })
                .collect::<Result<Vec<_>, _>>()
        })??;
        let row = aggregate(fr, &stats);
        log::info!(
            "{} flow {:.3} inj {:.3}: P {:.4} p {:.4}",
            case.name(),
            fr.flow,
            fr.injection,
            row.p_observable.value,
            row.p_retrievable.value
        );
        rows.push(row);
    }
    Ok(EnsembleResult {
        case: case.name().to_string(),
        spec: spec.clone(),
        rows,
    })
}

pub fn observability_probability(case: &GridCase, spec: &EnsembleSpec) -> Result<Vec<(MissingFractions, Estimate)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?.rows.iter().map(|r| (r.fractions, r.p_observable)).collect())
}

pub fn retrievability_fraction(case: &GridCase, spec: &EnsembleSpec) -> Result<Vec<(MissingFractions, Estimate)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?.rows.iter().map(|r| (r.fractions, r.p_retrievable)).collect())
}

pub fn effective_dof_curve(
    case: &GridCase,
    spec: &EnsembleSpec,
) -> Result<Vec<(MissingFractions, Option<Estimate>)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?.rows.iter().map(|r| (r.fractions, r.n_eff)).collect())
}

pub fn correlation_c(case: &GridCase, spec: &EnsembleSpec) -> Result<Vec<(MissingFractions, Estimate)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?.rows.iter().map(|r| (r.fractions, r.c)).collect())
}

pub fn correlation_m(case: &GridCase, spec: &EnsembleSpec) -> Result<Vec<(MissingFractions, Estimate)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?.rows.iter().map(|r| (r.fractions, r.m)).collect())
}

pub fn variance_ratio_by_depth(
    case: &GridCase,
    spec: &EnsembleSpec,
) -> Result<Vec<(MissingFractions, Vec<DepthRow>)>, ExperimentError> {
    Ok(run_ensemble(case, spec)?
        .rows
        .into_iter()
        .map(|r| (r.fractions, r.variance_ratio))
        .collect())
}

/// Inclusive `start:stop:step` range, e.g. `0:0.5:0.02`; a single number is
/// a one-element range.
pub fn parse_fraction_range(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("bad number {s:?} in {text:?}"));
    match parts.as_slice() {
        [one] => Ok(vec![num(one)?]),
        [a, b, c] => {
            let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || stop < start {
                return Err(format!("range {text:?} needs step > 0 and stop >= start"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            // Snap to the decimal grid so 0.1 + 0.2 prints as 0.3.
            Ok((0..=count)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(format!("expected start:stop:step or a number, got {text:?}")),
    }
}

pub fn ensemble_csv(result: &EnsembleResult) -> String {
    let mut out = String::from(
        "case,flow_fraction,injection_fraction,samples,converged,mean_iterations,P,P_se,p,p_se,n_eff,n_eff_se,C,C_se,M,M_se,K,K_se\n",
    );
    for r in &result.rows {
        let (ne, ne_se) = r
            .n_eff
            .map_or((String::new(), String::new()), |e| (e.value.to_string(), e.se.to_string()));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            result.case,
            r.fractions.flow,
            r.fractions.injection,
            r.samples,
            r.converged,
            r.mean_iterations,
            r.p_observable.value,
            r.p_observable.se,
            r.p_retrievable.value,
            r.p_retrievable.se,
            ne,
            ne_se,
            r.c.value,
            r.c.se,
            r.m.value,
            r.m.se,
            r.k.value,
            r.k.se
        )
        .unwrap();
    }
    out
}

pub fn r_profile_csv(result: &EnsembleResult) -> String {
    let mut out = String::from("case,flow_fraction,injection_fraction,n,r_ratio\n");
    for r in &result.rows {
        for (n, ratio) in &r.r_profile {
            writeln!(out, "{},{},{},{n},{ratio}", result.case, r.fractions.flow, r.fractions.injection).unwrap();
        }
    }
    out
}

pub fn variance_ratio_csv(result: &EnsembleResult) -> String {
    let mut out = String::from("case,flow_fraction,injection_fraction,depth,count,mean_variance,ratio\n");
    for r in &result.rows {
        for d in &r.variance_ratio {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                result.case, r.fractions.flow, r.fractions.injection, d.depth, d.count, d.mean_variance, d.ratio
            )
            .unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub case: String,
    pub buses: usize,
    pub lines: usize,
    pub fraction: f64,
    pub bp_ms: f64,
    pub wls_ms: f64,
    pub bp_iterations: usize,
    /// Some repeat failed to converge; it is left out of the medians.
    pub flagged: bool,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median wall time of BP (to convergence) and of the WLS solve, per case and
/// equal missing fraction. Runs sequentially so timings do not interfere.
pub fn timing_benchmark(
    cases: &[GridCase],
    fractions: &[f64],
    repeats: usize,
    base_seed: u64,
    bp: &BpOptions,
) -> Result<Vec<TimingRow>, ExperimentError> {
    let mut rows = Vec::new();
    for case in cases {
        for &fraction in fractions {
            let mut bp_ms = Vec::new();
            let mut wls_ms = Vec::new();
            let mut iterations = Vec::new();
            let mut flagged = false;
            for r in 0..repeats.max(1) as u64 {
                let seed = base_seed + r;
                let mask = make_mask(case, MissingFractions::equal(fraction), PlacementStrategy::Uniform, seed)?;
                let meas = sample_measurements(case, &mask, DEFAULT_VARIANCE, seed)?;
                let graph = build_factor_graph(case, &meas)?;
                let t = Instant::now();
                let result = run_bp(&graph, bp).map_err(|source| ExperimentError::Bp { seed, source })?;
                let bp_time = t.elapsed().as_secs_f64() * 1e3;
                let t = Instant::now();
                let sol = wls_flows(&graph);
                let wls_time = t.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(&sol);
                if result.converged {
                    bp_ms.push(bp_time);
                    iterations.push(result.iterations as f64);
                } else {
                    flagged = true;
                }
                wls_ms.push(wls_time);
            }
            rows.push(TimingRow {
                case: case.name().to_string(),
                buses: case.buses().len(),
                lines: case.lines().len(),
                fraction,
                bp_ms: median(bp_ms),
                wls_ms: median(wls_ms),
                bp_iterations: median(iterations) as usize,
                flagged,
            });
        }
    }
    Ok(rows)
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("case,buses,lines,fraction,bp_ms,wls_ms,bp_iterations,flagged\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.case, r.buses, r.lines, r.fraction, r.bp_ms, r.wls_ms, r.bp_iterations, r.flagged
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line through (x, y).
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub base_seed: u64,
    pub workers: usize,
    pub crate_version: String,
    pub git_revision: Option<String>,
    pub started_unix: u64,
    pub wall_time_s: f64,
}
