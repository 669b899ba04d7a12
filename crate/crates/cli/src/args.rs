//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gapdyn_core::ingest::parse_timestamp;
use gapdyn_core::missingness::{DEFAULT_BLOCK_MAX_HOURS, DEFAULT_BLOCK_MIN_HOURS};
use gapdyn_core::pipeline::ReportFormat;
use gapdyn_core::sindy::RefineSource;
use gapdyn_core::HourRange;

#[derive(Debug, Parser)]
#[command(name = "gapdyn", version, about = "Gap filling and SINDy refinement for hourly station series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a station CSV, optionally z-score it, and write it back out.
    Ingest(IngestArgs),
    /// Hide a seeded share of observed cells.
    Inject(InjectArgs),
    /// Fill every missing cell with one of the four methods.
    Impute(ImputeArgs),
    /// Fit or apply a one-step SINDy model.
    #[command(subcommand)]
    Sindy(SindyCommand),
    /// Run the full missing-level sweep and write reports.
    Experiment(ExperimentArgs),
    /// Re-emit a saved report as JSON or CSV.
    Report(ReportArgs),
    /// Write a synthetic multi-station CSV with known linear dynamics.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum SindyCommand {
    Fit(SindyFitArgs),
    Predict(SindyPredictArgs),
}

/// `START..END` as epoch hours or `YYYY-MM-DDTHH:00` timestamps.
pub fn parse_range(text: &str) -> Result<HourRange, String> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| format!("expected START..END, got `{text}`"))?;
    let hour = |s: &str| {
        s.trim()
            .parse::<i64>()
            .ok()
            .or_else(|| parse_timestamp(s.trim()))
            .ok_or_else(|| format!("`{s}` is neither an epoch hour nor YYYY-MM-DDTHH:00"))
    };
    let range = HourRange::new(hour(a)?, hour(b)?);
    if range.is_empty() {
        return Err(format!("range `{text}` is empty"));
    }
    Ok(range)
}

fn parse_fraction(text: &str) -> Result<f64, String> {
    let f: f64 = text.parse().map_err(|_| format!("`{text}` is not a number"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("fraction must lie strictly between 0 and 1, got {f}"))
    }
}

fn parse_positive(text: &str) -> Result<usize, String> {
    match text.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{text}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaArg {
    Auto,
    Fixed(f64),
}

fn parse_lambda(text: &str) -> Result<LambdaArg, String> {
    if text == "auto" {
        return Ok(LambdaArg::Auto);
    }
    match text.parse::<f64>() {
        Ok(l) if l >= 0.0 && l.is_finite() => Ok(LambdaArg::Fixed(l)),
        _ => Err(format!("expected `auto` or a non-negative number, got `{text}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Random,
    Block,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Si,
    Knn,
    SiSindy,
    KnnSindy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Imputed,
    Refined,
}

impl From<SourceArg> for RefineSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Imputed => RefineSource::Imputed,
            SourceArg::Refined => RefineSource::Refined,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub input: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Write per-station z-scores instead of raw values.
    #[arg(long)]
    pub normalize: bool,
    /// Rows the normalization is fitted on; all rows when absent.
    #[arg(long, value_parser = parse_range)]
    pub train_range: Option<HourRange>,
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    pub input: PathBuf,
    #[arg(long, value_parser = parse_fraction)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value_t = RegimeArg::Random)]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = DEFAULT_BLOCK_MIN_HOURS)]
    pub min_len: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_MAX_HOURS)]
    pub max_len: usize,
    #[arg(long, env = "GAPDYN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Injection record JSON.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 5, value_parser = parse_positive)]
    pub k: usize,
    #[arg(long, default_value = "auto", value_parser = parse_lambda)]
    pub lambda: LambdaArg,
    /// Rows used for normalization, λ selection and SINDy fitting.
    #[arg(long, value_parser = parse_range)]
    pub train_range: Option<HourRange>,
    /// Saved SINDy model for the hybrid methods.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    pub passes: usize,
    /// Predecessor rows for refinement.
    #[arg(long, value_enum, default_value_t = SourceArg::Imputed)]
    pub source: SourceArg,
    /// Seed of the λ-selection holdout.
    #[arg(long, env = "GAPDYN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SindyFitArgs {
    pub input: PathBuf,
    #[arg(long, value_parser = parse_range)]
    pub train_range: HourRange,
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long)]
    pub no_constant: bool,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    #[arg(long, default_value_t = 20)]
    pub max_rounds: usize,
    /// Fit on z-scores of the training rows; the model is then normalized.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SindyPredictArgs {
    pub states: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Station CSV; overrides any data source in the configuration.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_range)]
    pub train_range: Option<HourRange>,
    #[arg(long, value_parser = parse_range)]
    pub eval_range: Option<HourRange>,
    #[arg(long, value_delimiter = ',', value_parser = parse_fraction)]
    pub levels: Option<Vec<f64>>,
    /// Overrides the configuration; without a configuration the default is
    /// `GAPDYN_SEED`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub regime: Option<RegimeArg>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_MIN_HOURS)]
    pub min_len: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_MAX_HOURS)]
    pub max_len: usize,
    #[arg(long, value_parser = parse_positive)]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_lambda)]
    pub lambda: Option<LambdaArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub stations: usize,
    #[arg(long, default_value_t = 17_544)]
    pub hours: usize,
    /// Share of cells missing before any injection.
    #[arg(long, default_value_t = 0.03)]
    pub missing: f64,
    #[arg(long, default_value_t = 2016)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
