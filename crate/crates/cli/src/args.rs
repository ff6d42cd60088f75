use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used when `--seed` is not given; always reported.
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Parser)]
#[command(name = "lcc", version, about = "Local case-control subsampling for logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Random seed (default 24301).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Output path; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Population limits and marginal odds ratios of a spec file.
    Oracle(OracleArgs),
    /// Subsample a CSV in one streaming pass.
    Sample(SampleArgs),
    /// Fit a weighted, offset logistic regression to a CSV.
    Fit(FitArgs),
    /// Asymptotic variance report for a spec, estimate and pilot.
    Asymptotics(AsymptoticsArgs),
    /// Run a replication study or convergence study from a config file.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub spec: PathBuf,

    /// Case-control log selection bias; repeatable. Defaults to equal
    /// expected class counts.
    #[arg(long = "b", allow_negative_numbers = true)]
    pub b: Vec<f64>,

    /// Monte-Carlo draws for Gaussian populations.
    #[arg(long)]
    pub draws: Option<usize>,

    /// Plot data for one-dimensional populations (512 rows).
    #[arg(long)]
    pub plot: Option<PathBuf>,

    /// Precision-recall curves of the population and case-control limits.
    #[arg(long)]
    pub pr: Option<PathBuf>,

    #[arg(long, default_value_t = 1_000_000)]
    pub pr_test_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeKind {
    Lcc,
    Cc,
    Wcc,
    Uniform,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub data: PathBuf,

    #[arg(long, value_enum, default_value_t = SchemeKind::Lcc)]
    pub scheme: SchemeKind,

    /// Pilot coefficient file; fitted by weighted case-control when absent.
    #[arg(long)]
    pub pilot: Option<PathBuf>,

    /// Expected size of an on-the-fly pilot sample.
    #[arg(long, default_value_t = 1000)]
    pub pilot_size: usize,

    #[arg(long)]
    pub c: Option<f64>,

    /// Keep every case, weighting it by `c a(x, 1)`.
    #[arg(long)]
    pub retain_cases: bool,

    /// Expected subsample size; calibrates `c`, the class rates or the
    /// uniform rate.
    #[arg(long)]
    pub target_size: Option<usize>,

    #[arg(long)]
    pub a0: Option<f64>,

    #[arg(long)]
    pub a1: Option<f64>,

    #[arg(long)]
    pub rate: Option<f64>,

    /// Summary path; defaults to the output path plus `.summary.json` or
    /// `.summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub data: PathBuf,

    /// Coefficient file added to the fit.
    #[arg(long)]
    pub adjustment: Option<PathBuf>,

    /// Ignore an `offset` column.
    #[arg(long)]
    pub ignore_offsets: bool,

    #[arg(long)]
    pub grad_tol: Option<f64>,

    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AsymptoticsArgs {
    pub spec: PathBuf,

    /// Estimate coefficient file; defaults to the limit for the pilot.
    #[arg(long)]
    pub theta: Option<PathBuf>,

    /// Pilot coefficient file; defaults to the population limit.
    #[arg(long)]
    pub lambda: Option<PathBuf>,

    #[arg(long, default_value_t = 1.0)]
    pub c: f64,

    /// Also compute the crossed matrix `C`.
    #[arg(long)]
    pub crossed: bool,

    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,

    /// Per-coefficient means and variances by method.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,

    /// Override the number of replications (or seeds).
    #[arg(long)]
    pub replications: Option<usize>,
}
