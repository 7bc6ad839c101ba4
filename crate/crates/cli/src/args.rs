use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icpch::ridge::log_spaced;
use icpch::simulation::{BaselineModel, Scenario};
use icpch::{CureModel, CutGrid};

#[derive(Debug, Parser)]
#[command(name = "icpch", version, about = "Piecewise-constant hazard Cox models for interval-censored data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select cuts, fit the model and report estimates with LR intervals.
    Fit(FitArgs),
    /// Write the full regularization path, one row per penalty.
    Path(PathArgs),
    /// Percentile bootstrap bands for the coefficients and baseline survival.
    Bootstrap(BootstrapArgs),
    /// Run a Monte Carlo study on simulated data.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct GridArgs {
    /// Equally spaced cuts as min:max:step.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<CutGrid>,
    /// Explicit interior cuts c1,c2,... ("none" for a single piece).
    #[arg(long, value_parser = parse_cuts)]
    pub cuts: Option<CutGrid>,
}

impl GridArgs {
    pub fn grid(&self) -> CutGrid {
        self.grid.clone().or_else(|| self.cuts.clone()).expect("clap requires one of --grid, --cuts")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CureArg {
    None,
    Scalar,
    Logistic,
}

impl CureArg {
    pub fn name(self) -> &'static str {
        match self {
            CureArg::None => "none",
            CureArg::Scalar => "scalar",
            CureArg::Logistic => "logistic",
        }
    }
}

impl From<CureArg> for CureModel {
    fn from(c: CureArg) -> Self {
        match c {
            CureArg::None => CureModel::None,
            CureArg::Scalar => CureModel::Scalar,
            CureArg::Logistic => CureModel::Logistic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Penalties as lo:hi:count, equally spaced on the log scale.
    #[arg(long, default_value = "0.1:10000:200", value_parser = parse_penalties)]
    pub penalties: Penalties,
    #[arg(long, value_enum, default_value_t = CureArg::None)]
    pub cure: CureArg,
    /// Fit on the given cuts without selection.
    #[arg(long)]
    pub fixed_cuts: bool,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Write the result here instead of standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for replicate-level parallelism (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Delimited data file with left, right and z_* / x_* columns.
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// One minus the confidence level of the LR intervals.
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "0.1:10000:200", value_parser = parse_penalties)]
    pub penalties: Penalties,
    #[arg(long, value_enum, default_value_t = CureArg::None)]
    pub cure: CureArg,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Times at which baseline survival bands are reported (default: the grid's cuts).
    #[arg(long, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    AdaptiveRidge,
    Midpoint,
    FixedCuts,
    Truth,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: BaselineModel,
    /// S1, S2, S3, S4, or cure:P for a common cured share 1 - P.
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Scenario,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub reps: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "adaptive-ridge,midpoint")]
    pub estimators: Vec<EstimatorArg>,
    /// Candidate cuts for the fitted estimators as min:max:step.
    #[arg(long, default_value = "10:90:5", value_parser = parse_grid, conflicts_with = "cuts")]
    pub grid: CutGrid,
    #[arg(long, value_parser = parse_cuts)]
    pub cuts: Option<CutGrid>,
    #[arg(long, default_value = "0.1:10000:200", value_parser = parse_penalties)]
    pub penalties: Penalties,
    #[arg(long, value_enum, default_value_t = CureArg::None)]
    pub cure: CureArg,
    #[arg(long, default_value_t = 0.05, value_parser = parse_alpha)]
    pub alpha: f64,
    /// Skip the LR intervals (coverage is then not reported).
    #[arg(long)]
    pub no_intervals: bool,
    /// Per-replicate records, one JSON object per line.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Also write the data of replicate 0.
    #[arg(long)]
    pub data_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penalties(pub Vec<f64>);

fn parse_f64(s: &str) -> Result<f64, String> {
    s.trim().parse::<f64>().map_err(|_| format!("{s:?} is not a number"))
}

pub fn parse_grid(s: &str) -> Result<CutGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        return Err("expected min:max:step".into());
    };
    CutGrid::equally_spaced(parse_f64(lo)?, parse_f64(hi)?, parse_f64(step)?).map_err(|e| e.to_string())
}

pub fn parse_cuts(s: &str) -> Result<CutGrid, String> {
    if s.trim().is_empty() || s.trim().eq_ignore_ascii_case("none") {
        return Ok(CutGrid::single());
    }
    let cuts = s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?;
    CutGrid::new(cuts).map_err(|e| e.to_string())
}

pub fn parse_penalties(s: &str) -> Result<Penalties, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        return Err("expected lo:hi:count".into());
    };
    let count: usize = count.trim().parse().map_err(|_| format!("{count:?} is not a count"))?;
    log_spaced(parse_f64(lo)?, parse_f64(hi)?, count).map(Penalties).map_err(|e| e.to_string())
}

pub fn parse_alpha(s: &str) -> Result<f64, String> {
    let a = parse_f64(s)?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("alpha must lie in (0, 1), got {a}"))
    }
}

fn parse_model(s: &str) -> Result<BaselineModel, String> {
    BaselineModel::parse(s).map_err(|e| e.to_string())
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    if let Some(p) = s.strip_prefix("cure:") {
        let p = parse_f64(p)?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(format!("susceptible share must lie in (0, 1], got {p}"));
        }
        return Ok(Scenario::ScalarCure { p });
    }
    Scenario::parse(s).map_err(|e| e.to_string())
}
