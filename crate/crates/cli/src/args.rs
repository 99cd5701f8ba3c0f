//! Command-line arguments. Every argument struct is serialized verbatim into
//! the outputs it produces.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isd_core::decomposition::CvOptions;
use isd_core::moments::GammaMode;
use isd_core::{IsdConfig, LambdaChoice, WindowScheme};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "isd", version = env!("ISD_VERSION"), about = "Invariant subspace decomposition for time-varying linear models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Estimate the invariant component from historical data.
    Fit(FitArgs),
    /// Slide an adaptation window through test data and predict one step ahead.
    Adapt(AdaptArgs),
    /// Run a seeded Monte-Carlo sweep and write tidy results.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GeneratorArg {
    Main,
    QuickVarying,
    Example2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScheduleArg {
    Historical,
    ZeroShot,
    TwoShifts,
    ThreeLevels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SchemeArg {
    EquallySpaced,
    Contiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GammaArg {
    Plain,
    VarianceWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ExperimentArg {
    ZeroShot,
    Adaptation,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "main")]
    pub generator: GeneratorArg,
    /// Number of historical rows.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test rows appended after the history (ignored by example2d).
    #[arg(long, value_enum, default_value = "historical")]
    pub schedule: ScheduleArg,
    /// Output directory for data.csv, history.csv, test.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Estimation settings shared by `fit` and `benchmark`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimationArgs {
    /// Number of windows.
    #[arg(long = "K", default_value_t = 25)]
    pub k: usize,
    /// Window length; defaults to n/8 (equally spaced) or n/K (contiguous).
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long, value_enum, default_value = "equally_spaced")]
    pub scheme: SchemeArg,
    #[arg(long = "gamma-mode", value_enum, default_value = "plain")]
    pub gamma_mode: GammaArg,
    /// Fixed invariance threshold in [0, 1].
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    /// Select the threshold by cross-validation (the default without --lambda).
    #[arg(long)]
    pub cv: bool,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Adaptation window length inside each fold; defaults to 2p.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "t-se", default_value_t = 1.0)]
    pub t_se: f64,
}

impl EstimationArgs {
    pub fn config(&self) -> IsdConfig {
        let lambda = match self.lambda {
            Some(l) => LambdaChoice::Fixed(l),
            None => LambdaChoice::Cv(CvOptions {
                folds: self.folds,
                d: self.d,
                t_se: self.t_se,
            }),
        };
        IsdConfig {
            k: self.k,
            w: self.w,
            scheme: match self.scheme {
                SchemeArg::EquallySpaced => WindowScheme::EquallySpaced,
                SchemeArg::Contiguous => WindowScheme::Contiguous,
            },
            gamma_mode: match self.gamma_mode {
                GammaArg::Plain => GammaMode::Plain,
                GammaArg::VarianceWeighted => GammaMode::VarianceWeighted,
            },
            lambda,
            ..IsdConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Historical data CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "y-col", default_value = "y")]
    pub y_col: String,
    /// Comma-separated covariate columns; defaults to every other column.
    #[arg(long = "x-cols", value_delimiter = ',')]
    pub x_cols: Option<Vec<String>>,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// Use the true subspaces from a ground-truth JSON instead of estimating them.
    #[arg(long = "oracle-split")]
    pub oracle_split: Option<PathBuf>,
    /// Use the true split and invariant coefficient from a ground-truth JSON.
    #[arg(long = "oracle-beta", conflicts_with = "oracle_split")]
    pub oracle_beta: Option<PathBuf>,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AdaptArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Test data CSV with the model's columns.
    #[arg(long)]
    pub data: PathBuf,
    /// Adaptation window length.
    #[arg(long)]
    pub m: usize,
    /// Per-step predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value = "zero_shot")]
    pub experiment: ExperimentArg,
    #[arg(long, value_enum, default_value = "main")]
    pub generator: GeneratorArg,
    /// History lengths for the zero-shot sweep.
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2500,4000,6000")]
    pub ns: Vec<usize>,
    /// History length for the adaptation sweep.
    #[arg(long, default_value_t = 6000)]
    pub n: usize,
    /// Adaptation window lengths for the adaptation sweep.
    #[arg(long, value_delimiter = ',', default_value = "15,20,50,100")]
    pub ms: Vec<usize>,
    /// Seeds as `a..b` (half-open) or a comma-separated list.
    #[arg(long, default_value = "0..20", value_parser = parse_seeds)]
    pub seeds: SeedList,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    /// Use the true split in the adaptation sweep.
    #[arg(long = "oracle-split")]
    pub oracle_split: bool,
    /// Output directory for tidy.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range end: {e}"))?;
        return Ok(SeedList((a..b).collect()));
    }
    if s.is_empty() {
        return Ok(SeedList(Vec::new()));
    }
    s.split(',')
        .map(|v| v.trim().parse::<u64>().map_err(|e| format!("bad seed '{v}': {e}")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}
