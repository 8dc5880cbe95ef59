//! Command-line arguments. Every subcommand's arguments double as its
//! persisted run configuration (`config.json`).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridbp::scenarios::{PlacementStrategy, DEFAULT_VARIANCE};
use gridbp::BpOptions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "gridbp", version, about = "Belief-propagation state estimation on DC power grids")]
pub struct Cli {
    /// Worker threads for parallel work; 0 = all available cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Directory searched for `<name>.cdf` before the bundled cases.
    #[arg(long, global = true, env = "GRIDBP_CASE_DIR")]
    pub case_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Estimate all line flows of one measurement set.
    Estimate(EstimateArgs),
    /// Monte Carlo ensembles and timing benchmarks.
    Experiment(ExperimentArgs),
    /// Inter-area flows and covariance for given or searched partitions.
    Partition(PartitionArgs),
    /// Topology summary of a case.
    Stats(CaseArgs),
    /// Write a case with its derived DC state as a snapshot file.
    Snapshot(SnapshotArgs),
    /// Re-run a persisted `config.json`.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Experiment(_) => "experiment",
            Command::Partition(_) => "partition",
            Command::Stats(_) => "stats",
            Command::Snapshot(_) => "snapshot",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CaseArgs {
    /// Bundled case name (ieee14 ... ieee300) or path to a CDF file.
    #[arg(long, default_value = "ieee14")]
    pub case: String,
    /// Merge parallel circuits into one line per bus pair.
    #[arg(long)]
    pub merge_parallel: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BpArgs {
    #[arg(long, default_value_t = BpOptions::default().max_iterations)]
    pub max_iter: usize,
    #[arg(long, default_value_t = BpOptions::default().tol_mean)]
    pub tol_mean: f64,
    #[arg(long, default_value_t = BpOptions::default().tol_var)]
    pub tol_var: f64,
    #[arg(long, default_value_t = 0.0)]
    pub damping: f64,
}

impl BpArgs {
    pub fn options(&self) -> BpOptions {
        BpOptions {
            max_iterations: self.max_iter,
            tol_mean: self.tol_mean,
            tol_var: self.tol_var,
            damping: self.damping,
            record_trace: false,
        }
    }
}

/// Synthetic measurement generation.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Measurement variance (MW²).
    #[arg(long, default_value_t = DEFAULT_VARIANCE)]
    pub variance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of flow and injection measurements removed.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    /// Overrides --missing for flows.
    #[arg(long)]
    pub flow_missing: Option<f64>,
    /// Overrides --missing for injections.
    #[arg(long)]
    pub injection_missing: Option<f64>,
    #[arg(long, default_value = "uniform")]
    pub strategy: PlacementStrategy,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Measurement CSV (`kind,id,z,variance`); synthetic draw if omitted.
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub bp: BpArgs,
    /// Append WLS columns and report the largest deviation.
    #[arg(long)]
    pub oracle: bool,
    /// Also write the per-iteration convergence trace.
    #[arg(long)]
    pub trace: bool,
    /// Run directory; the estimate CSV goes to stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Observability,
    Retrievability,
    Neff,
    Correlations,
    Rprofile,
    VarianceRatio,
    Bench,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ExperimentArgs {
    pub metric: Metric,
    #[arg(long, default_value = "ieee300")]
    pub case: String,
    /// Comma-separated cases for `bench`.
    #[arg(long, value_delimiter = ',', default_value = "ieee14,ieee30,ieee57,ieee118,ieee300")]
    pub cases: Vec<String>,
    /// Equal flow/injection missing fractions, `start:stop:step` or a number.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Single equal missing fraction; shorthand for `--fractions F`.
    #[arg(long)]
    pub missing: Option<f64>,
    /// Extra `flow/injection` fraction pairs, e.g. `0.2/0.5`.
    #[arg(long = "skewed", value_delimiter = ',')]
    pub skewed: Vec<String>,
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "uniform")]
    pub strategy: PlacementStrategy,
    #[arg(long, default_value_t = DEFAULT_VARIANCE)]
    pub variance: f64,
    /// Repetitions per case and fraction for `bench`.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long)]
    pub merge_parallel: bool,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Partition file(s) with `bus_id area_label` lines; repeat to compare.
    #[arg(long = "file")]
    pub files: Vec<PathBuf>,
    /// Search for a partition with this many areas.
    #[arg(long)]
    pub search: Option<usize>,
    /// Annealing seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Objective weight per boundary line (the trace has weight 1).
    #[arg(long, default_value_t = 0.0)]
    pub cut_weight: f64,
    /// Measurement variance (MW²).
    #[arg(long, default_value_t = DEFAULT_VARIANCE)]
    pub variance: f64,
    /// Seed of the measurement noise draw.
    #[arg(long, default_value_t = 0)]
    pub measurement_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SnapshotArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    /// Output file; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `config.json` written by an earlier run.
    pub config: PathBuf,
    /// Run directory for the replay (required for commands that write one).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What `config.json` holds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub workers: usize,
    pub case_dir: Option<PathBuf>,
    pub command: Command,
}
