//! `gridbp` command-line tool.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical or convergence failure.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context as _};
use clap::Parser;
use gridbp::bp::{trace_csv, BpError};
use gridbp::coarse_grain::{
    area_flow_covariance, partition_search, read_partition, AnnealingOptions, CoarseError, LinearResponseOptions,
    ObjectiveWeights, Partition,
};
use gridbp::experiments::{
    ensemble_csv, linear_fit, parse_fraction_range, r_profile_csv, run_ensemble, timing_benchmark, timing_csv,
    variance_ratio_csv, EnsembleResult, EnsembleSpec, ExperimentError, RunManifest,
};
use gridbp::grid::{write_snapshot, ImportOptions, ParallelLines};
use gridbp::scenarios::{make_mask, sample_measurements, MissingFractions, MissingMask, PlacementStrategy};
use gridbp::wls::wls_flows;
use gridbp::{build_factor_graph, cases, run_bp, GridCase, MeasurementSet};

use config::{
    CaseArgs, Cli, Command, EstimateArgs, ExperimentArgs, Metric, PartitionArgs, RunConfig, SnapshotArgs,
};

/// An error with its exit code.
enum Failure {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = RunConfig {
        workers: cli.workers,
        case_dir: cli.case_dir,
        command: cli.command,
    };
    match execute(config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(config: RunConfig) -> Outcome {
    if config.workers > 0 {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global();
    }
    let ctx = RunContext {
        started: Instant::now(),
        started_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: config.clone(),
    };
    match &config.command {
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Experiment(a) => experiment(&ctx, a),
        Command::Partition(a) => partition(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Snapshot(a) => snapshot(&ctx, a),
        Command::Replay(a) => {
            let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
            let mut stored: RunConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
            match &mut stored.command {
                Command::Estimate(c) => c.out = a.out.clone(),
                Command::Experiment(c) => c.out = a.out.clone(),
                Command::Partition(c) => c.out = a.out.clone(),
                Command::Snapshot(c) => c.out = a.out.clone(),
                Command::Stats(_) => {}
                Command::Replay(_) => return Err(anyhow!("a replay config cannot itself be a replay").into()),
            }
            execute(stored)
        }
    }
}

struct RunContext {
    started: Instant,
    started_unix: u64,
    config: RunConfig,
}

impl RunContext {
    fn load_case(&self, case: &str, merge_parallel: bool) -> anyhow::Result<GridCase> {
        let opts = ImportOptions {
            parallel: if merge_parallel {
                ParallelLines::Merge
            } else {
                ParallelLines::Keep
            },
        };
        let case = cases::resolve(case, self.config.case_dir.as_deref(), opts)?;
        Ok(case.derive_dc_state())
    }

    /// Creates the run directory and writes `config.json`.
    fn run_dir(&self, out: Option<&Path>) -> anyhow::Result<PathBuf> {
        let dir = match out {
            Some(d) => d.to_path_buf(),
            None => PathBuf::from("runs").join(format!("{}-{}", self.config.command.name(), self.started_unix)),
        };
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("config.json"), &serde_json::to_string_pretty(&self.config)?)?;
        Ok(dir)
    }

    fn manifest(&self, dir: &Path, command: String, base_seed: u64) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command,
            base_seed,
            workers: self.config.workers,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: git_revision(),
            started_unix: self.started_unix,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
    }
}

fn git_revision() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn fmt_opt(x: f64, show: bool) -> String {
    if show {
        x.to_string()
    } else {
        String::new()
    }
}

fn estimate(ctx: &RunContext, a: &EstimateArgs) -> Outcome {
    let case = ctx.load_case(&a.case.case, a.case.merge_parallel)?;
    let meas = match &a.measurements {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            MeasurementSet::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => {
            let s = &a.synth;
            let fractions = MissingFractions {
                flow: s.flow_missing.unwrap_or(s.missing),
                injection: s.injection_missing.unwrap_or(s.missing),
            };
            let mask = make_mask(&case, fractions, s.strategy, s.seed)?;
            sample_measurements(&case, &mask, s.variance, s.seed)?
        }
    };
    let graph = build_factor_graph(&case, &meas)?;
    let mut opts = a.bp.options();
    opts.record_trace = a.trace;
    let result = run_bp(&graph, &opts).map_err(bp_failure)?;
    let oracle = a.oracle.then(|| wls_flows(&graph));

    let mut csv = String::from("line_id,from_bus,to_bus,mean,variance,retrievable,depth");
    if oracle.is_some() {
        csv.push_str(",wls_mean,wls_variance,wls_retrievable");
    }
    csv.push('\n');
    let mut max_dev: f64 = 0.0;
    for (i, line) in case.lines().iter().enumerate() {
        let b = result.beliefs[i];
        let depth = result.first_finite_iter[i].map(|d| d.to_string()).unwrap_or_default();
        write!(
            csv,
            "{},{},{},{},{},{},{}",
            line.id,
            line.from_bus,
            line.to_bus,
            fmt_opt(b.mean, b.is_finite()),
            b.variance,
            b.is_finite(),
            depth
        )
        .unwrap();
        if let Some(w) = &oracle {
            write!(
                csv,
                ",{},{},{}",
                fmt_opt(w.means[i], w.retrievable[i]),
                w.variance(i),
                w.retrievable[i]
            )
            .unwrap();
            if b.is_finite() && w.retrievable[i] {
                max_dev = max_dev.max((b.mean - w.means[i]).abs());
            }
        }
        csv.push('\n');
    }

    eprintln!(
        "{}: {} of {} lines retrievable; {} after {} iterations",
        case.name(),
        result.retrievable_count(),
        case.lines().len(),
        if result.converged { "converged" } else { "not converged" },
        result.iterations
    );
    if let Some(w) = &oracle {
        let agree = (0..case.lines().len()).all(|i| result.beliefs[i].is_finite() == w.retrievable[i]);
        eprintln!("oracle: max |BP mean - WLS mean| = {max_dev:e} MW; retrievable sets agree: {agree}");
    }

    match &a.out {
        Some(out) => {
            let dir = ctx.run_dir(Some(out))?;
            write(&dir.join("estimate.csv"), &csv)?;
            write(&dir.join("measurements.csv"), &meas.to_csv())?;
            if a.trace {
                write(&dir.join("trace.csv"), &trace_csv(&result.trace))?;
            }
            ctx.manifest(&dir, "estimate".into(), a.synth.seed)?;
            eprintln!("wrote {}", dir.display());
        }
        None => print!("{csv}"),
    }
    if !result.converged {
        return Err(Failure::Numerical(anyhow!(
            "BP did not converge within {} iterations",
            opts.max_iterations
        )));
    }
    Ok(())
}

fn bp_failure(e: BpError) -> Failure {
    match e {
        BpError::InvalidOptions(_) | BpError::WarmStartShape { .. } => Failure::Input(e.into()),
        BpError::Numerical { .. } => Failure::Numerical(e.into()),
    }
}

fn experiment_failure(e: ExperimentError) -> Failure {
    match e {
        e @ ExperimentError::Bp {
            source: BpError::Numerical { .. },
            ..
        } => Failure::Numerical(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn experiment_fractions(a: &ExperimentArgs) -> anyhow::Result<Vec<MissingFractions>> {
    let mut out = Vec::new();
    if let Some(range) = &a.fractions {
        out.extend(
            parse_fraction_range(range)
                .map_err(|e| anyhow!(e))?
                .into_iter()
                .map(MissingFractions::equal),
        );
    }
    if let Some(f) = a.missing {
        out.push(MissingFractions::equal(f));
    }
    for pair in &a.skewed {
        let (flow, inj) = pair
            .split_once('/')
            .ok_or_else(|| anyhow!("skewed fractions must look like 0.2/0.5, got {pair:?}"))?;
        out.push(MissingFractions {
            flow: flow.trim().parse().with_context(|| format!("bad fraction in {pair:?}"))?,
            injection: inj.trim().parse().with_context(|| format!("bad fraction in {pair:?}"))?,
        });
    }
    if out.is_empty() {
        let default = match a.metric {
            Metric::Rprofile | Metric::VarianceRatio => "0.3",
            Metric::Correlations => "0:1:0.1",
            Metric::Bench => "0:0.3:0.3",
            _ => "0:0.5:0.02",
        };
        out = parse_fraction_range(default)
            .map_err(|e| anyhow!(e))?
            .into_iter()
            .map(MissingFractions::equal)
            .collect();
    }
    Ok(out)
}

fn metric_csv(metric: Metric, result: &EnsembleResult) -> (&'static str, String) {
    let mut out = String::new();
    let mut table = |name: &'static str, header: &str, cols: &dyn Fn(&gridbp::experiments::FractionRow) -> String| {
        out = format!("case,flow_fraction,injection_fraction,samples,{header}\n");
        for r in &result.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                result.case,
                r.fractions.flow,
                r.fractions.injection,
                r.samples,
                cols(r)
            )
            .unwrap();
        }
        (name, std::mem::take(&mut out))
    };
    match metric {
        Metric::Observability => table("observability.csv", "P,P_se", &|r| {
            format!("{},{}", r.p_observable.value, r.p_observable.se)
        }),
        Metric::Retrievability => table("retrievability.csv", "p,p_se", &|r| {
            format!("{},{}", r.p_retrievable.value, r.p_retrievable.se)
        }),
        Metric::Neff => table("neff.csv", "P,p,n_eff,n_eff_se", &|r| {
            let (v, se) = r
                .n_eff
                .map_or((String::new(), String::new()), |e| (e.value.to_string(), e.se.to_string()));
            format!("{},{},{v},{se}", r.p_observable.value, r.p_retrievable.value)
        }),
        Metric::Correlations => table("correlations.csv", "C,C_se,M,M_se,K,K_se", &|r| {
            format!(
                "{},{},{},{},{},{}",
                r.c.value, r.c.se, r.m.value, r.m.se, r.k.value, r.k.se
            )
        }),
        Metric::Rprofile => ("rprofile.csv", r_profile_csv(result)),
        Metric::VarianceRatio => ("variance_ratio.csv", variance_ratio_csv(result)),
        Metric::Bench => unreachable!("bench has no ensemble"),
    }
}

fn experiment(ctx: &RunContext, a: &ExperimentArgs) -> Outcome {
    let fractions = experiment_fractions(a)?;
    if a.metric == Metric::Bench {
        let cases = a
            .cases
            .iter()
            .map(|c| ctx.load_case(c, a.merge_parallel))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let flat: Vec<f64> = fractions.iter().map(|f| f.flow).collect();
        let rows = timing_benchmark(&cases, &flat, a.repeats, a.seed, &a.bp.options()).map_err(experiment_failure)?;
        let dir = ctx.run_dir(a.out.as_deref())?;
        write(&dir.join("timing.csv"), &timing_csv(&rows))?;
        let mut fit = String::from("fraction,slope_ms_per_item,intercept_ms,r_squared\n");
        for &f in &flat {
            let sel: Vec<_> = rows.iter().filter(|r| r.fraction == f).collect();
            let x: Vec<f64> = sel.iter().map(|r| (r.buses + r.lines) as f64).collect();
            let y: Vec<f64> = sel.iter().map(|r| r.bp_ms).collect();
            let lf = linear_fit(&x, &y);
            writeln!(fit, "{f},{},{},{}", lf.slope, lf.intercept, lf.r_squared).unwrap();
            println!("missing {f}: BP time = {:.3e} ms x (lines+buses) + {:.3e} ms, R^2 = {:.4}", lf.slope, lf.intercept, lf.r_squared);
        }
        write(&dir.join("timing_fit.csv"), &fit)?;
        ctx.manifest(&dir, "experiment bench".into(), a.seed)?;
        println!("wrote {}", dir.display());
        return Ok(());
    }

    let case = ctx.load_case(&a.case, a.merge_parallel)?;
    let spec = EnsembleSpec {
        n_samples: a.samples,
        fractions,
        strategy: a.strategy,
        variance: a.variance,
        base_seed: a.seed,
        workers: ctx.config.workers,
        bp: a.bp.options(),
    };
    let result = run_ensemble(&case, &spec).map_err(experiment_failure)?;
    let dir = ctx.run_dir(a.out.as_deref())?;
    write(&dir.join("ensemble.csv"), &ensemble_csv(&result))?;
    let (name, csv) = metric_csv(a.metric, &result);
    write(&dir.join(name), &csv)?;
    print!("{csv}");
    let metric = serde_json::to_value(a.metric)?;
    ctx.manifest(&dir, format!("experiment {}", metric.as_str().unwrap_or("")), a.seed)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn coarse_failure(e: CoarseError) -> Failure {
    match e {
        CoarseError::NotConverged { .. } | CoarseError::Bp(BpError::Numerical { .. }) => Failure::Numerical(e.into()),
        other => Failure::Input(other.into()),
    }
}

fn partition(ctx: &RunContext, a: &PartitionArgs) -> Outcome {
    if a.files.is_empty() && a.search.is_none() {
        return Err(anyhow!("give at least one --file or --search N").into());
    }
    let case = ctx.load_case(&a.case.case, a.case.merge_parallel)?;
    let mask = MissingMask::none(PlacementStrategy::Uniform);
    let meas = sample_measurements(&case, &mask, a.variance, a.measurement_seed)?;
    let graph = build_factor_graph(&case, &meas)?;
    let lr = LinearResponseOptions::default();
    let dir = ctx.run_dir(a.out.as_deref())?;

    let mut partitions: Vec<Partition> = Vec::new();
    for path in &a.files {
        let mut p = read_partition(path, &case).map_err(coarse_failure)?;
        if partitions.iter().any(|q| q.name == p.name) {
            p.name = format!("{}_{}", p.name, partitions.len() + 1);
        }
        partitions.push(p);
    }
    if let Some(n) = a.search {
        let weights = ObjectiveWeights {
            trace: 1.0,
            cut_lines: a.cut_weight,
        };
        let anneal = AnnealingOptions {
            steps: a.steps,
            ..AnnealingOptions::default()
        };
        let found = partition_search(&case, &graph, n, &weights, a.seed, &anneal, &lr).map_err(coarse_failure)?;
        let mut moves = String::from("step,bus,from_area,to_area,objective,temperature\n");
        for m in &found.moves {
            writeln!(
                moves,
                "{},{},{},{},{},{}",
                m.step,
                m.bus,
                found.best.areas[m.from_area],
                found.best.areas[m.to_area],
                m.objective,
                m.temperature
            )
            .unwrap();
        }
        write(&dir.join("search_moves.csv"), &moves)?;
        write(&dir.join("search_start.partition"), &found.start.to_text())?;
        write(&dir.join("search.partition"), &found.best.to_text())?;
        println!(
            "search: objective {:e} (start {:e}) after {} accepted moves",
            found.best_objective,
            found.start_objective,
            found.moves.len()
        );
        partitions.push(found.best);
    }

    let mut scores = String::from("partition,trace_mw2,boundary_pairs\n");
    let mut ranked = Vec::new();
    for p in &partitions {
        let report = area_flow_covariance(&graph, p, &case, &lr).map_err(coarse_failure)?;
        write(&dir.join(format!("{}_flows.csv", p.name)), &report.flows_csv(&graph))?;
        write(&dir.join(format!("{}_covariance.csv", p.name)), &report.covariance_csv())?;
        writeln!(scores, "{},{},{}", p.name, report.trace, report.flows.boundary.non_empty_pairs()).unwrap();
        println!("score {} {:e}", p.name, report.trace);
        ranked.push((report.trace, p.name.clone()));
    }
    write(&dir.join("scores.csv"), &scores)?;
    if ranked.len() > 1 {
        let best = ranked
            .iter()
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .expect("non-empty");
        println!("lowest trace: {}", best.1);
    }
    ctx.manifest(&dir, "partition".into(), a.seed)?;
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn stats(ctx: &RunContext, a: &CaseArgs) -> Outcome {
    let case = ctx.load_case(&a.case, a.merge_parallel)?;
    let s = case.topology_stats();
    println!("case: {}", case.name());
    println!("buses: {}", s.bus_count);
    println!("lines: {}", s.line_count);
    println!("components: {}", s.component_count);
    println!("independent loops: {}", s.loop_count);
    println!("merged parallel circuits: {}", case.merged_circuits().len());
    let hist: Vec<String> = s.degree_histogram.iter().map(|(d, n)| format!("{d}:{n}")).collect();
    println!("degree histogram: {}", hist.join(" "));
    Ok(())
}

fn snapshot(ctx: &RunContext, a: &SnapshotArgs) -> Outcome {
    let case = ctx.load_case(&a.case.case, a.case.merge_parallel)?;
    let text = write_snapshot(&case);
    match &a.out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
