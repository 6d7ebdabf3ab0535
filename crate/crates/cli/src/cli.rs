use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Parses a model size given as a raw parameter count ("2.45e9", "36000000").
pub fn parse_size(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("model size must be positive, got {s}"))
    }
}

fn parse_count(s: &str) -> Result<u64, String> {
    let v = parse_size(s)?;
    if v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(format!("`{s}` is not a whole number"));
    }
    Ok(v as u64)
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("probability must lie in [0, 1], got {s}"))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "passuntil",
    version,
    about = "Adaptive pass-rate estimation and task scaling-law analysis",
    args_override_self = true
)]
pub struct Cli {
    /// JSON file whose keys supply flags of the chosen subcommand
    /// (`{"r": 2, "max-k": 100000}`); flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Measure PassUntil estimates for every instance of a suite.
    Eval(EvalArgs),
    /// Fit the task scaling law to finished runs.
    Fit(FitArgs),
    /// Predict PU at a new model size from a fit report.
    Predict(PredictArgs),
    /// Classify the growth of PU across finished runs.
    Classify(ClassifyArgs),
    /// Generate synthetic PU values or full trial logs.
    Simulate(SimulateArgs),
    /// Write deterministic CSV or JSON tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Synthetic,
    Endpoint,
    /// Answer from a previously written trial log.
    Replay,
}

/// Synthetic ground truth. For `eval` it replaces the model of every
/// instance in the suite.
#[derive(Debug, Clone, Args)]
#[group(multiple = false)]
pub struct FamilyArgs {
    /// Fixed pass probability.
    #[arg(long, value_parser = parse_probability)]
    pub p: Option<f64>,
    /// One task law: `c=<c>,alpha=<alpha>`.
    #[arg(long)]
    pub law: Option<String>,
    /// Steps that must all pass: `c=..,alpha=..;c=..,alpha=..`.
    #[arg(long)]
    pub steps: Option<String>,
    /// Alternative circuits, any of which may pass: same format as --steps.
    #[arg(long)]
    pub circuits: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub oracle: OracleKind,
    #[arg(long)]
    pub model_id: String,
    /// Non-embedding parameter count.
    #[arg(long, value_parser = parse_size)]
    pub model_size: f64,
    /// Passes required before sampling stops.
    #[arg(long, default_value_t = 1)]
    pub r: u32,
    #[arg(long, value_parser = parse_count, default_value = "100000")]
    pub max_k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Run directory; an existing run there is resumed.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the name of the run directory.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Extra attempts for an erroring trial before the instance aborts.
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Bootstrap replications for the dataset-level standard error.
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Generation endpoint URL (endpoint oracle).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "PU_API_TOKEN")]
    pub auth_env: String,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 256)]
    pub max_tokens: u32,
    #[arg(long, value_delimiter = ',')]
    pub stop: Vec<String>,
    #[arg(long, default_value_t = 120_000)]
    pub request_timeout_ms: u64,
    /// Trial log to answer from (replay oracle).
    #[arg(long)]
    pub replay_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitLevel {
    Dataset,
    Instance,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value = "dataset")]
    pub level: FitLevel,
    /// Run directories, one per model size.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub runs: Vec<PathBuf>,
    /// Loss table for instances that cannot be fitted directly.
    #[arg(long)]
    pub losses: Option<PathBuf>,
    /// Fit censored points at r_observed / k_max instead of dropping them.
    #[arg(long)]
    pub include_censored: bool,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, value_parser = parse_size)]
    pub target_n: f64,
    /// Observed PU at the target size.
    #[arg(long)]
    pub actual: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToleranceRule {
    MedianSe,
    PerDifference,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SoftMinFormArg {
    Minimum,
    Negated,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub bootstrap: usize,
    /// Exit with status 5 when the verdict is inconclusive.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_enum, default_value = "median-se")]
    pub tolerance: ToleranceRule,
    /// Multiplier, z value or absolute threshold, depending on the rule.
    #[arg(long)]
    pub tolerance_value: Option<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub min_sign_consistency: f64,
    #[arg(long, default_value_t = 0.7)]
    pub min_support: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "minimum")]
    pub soft_min_form: SoftMinFormArg,
    #[arg(long, default_value_t = 1.0)]
    pub soft_min_temperature: f64,
    /// Directory for classification.json and classification.csv; the
    /// verdict alone is printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Pu,
    Trials,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',', value_parser = parse_size)]
    pub sizes: Vec<f64>,
    #[arg(long, value_enum, default_value = "pu")]
    pub emit: Emit,
    /// CSV file for `pu`, output directory for `trials`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Instances per size (`trials` only).
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1)]
    pub r: u32,
    #[arg(long, value_parser = parse_count, default_value = "100000")]
    pub max_k: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories to tabulate.
    #[arg(long = "run", num_args = 1.., value_delimiter = ',')]
    pub runs: Vec<PathBuf>,
    /// Fit report from `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Classification report from `classify`.
    #[arg(long)]
    pub classify: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, default_value = "reports")]
    pub out: PathBuf,
}
