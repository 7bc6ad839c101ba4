use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{baseline_cumulative_hazard, CutGrid, Dataset};
use crate::mstep::{em_fit, FitConfig, FitResult};
use crate::ridge::{regularization_path, PathConfig};
use crate::rng::stream_rng;

/// Draws the subject indices of one bootstrap sample.
pub trait Resampler: Sync {
    fn resample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

/// Ordinary case resampling with replacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaseResampler;

impl Resampler for CaseResampler {
    fn resample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    }
}

/// How each bootstrap sample is fitted.
#[derive(Debug, Clone)]
pub enum BootstrapFit {
    /// Cuts held fixed.
    FixedCuts { grid: CutGrid, config: FitConfig },
    /// Cuts re-selected on every sample.
    Path { grid: CutGrid, penalties: Vec<f64>, config: PathConfig },
}

impl BootstrapFit {
    pub fn fit(&self, data: &Dataset) -> Result<FitResult> {
        match self {
            BootstrapFit::FixedCuts { grid, config } => em_fit(data, grid, config),
            BootstrapFit::Path { grid, penalties, config } => {
                Ok(regularization_path(data, grid, penalties, config)?.best_fit().clone())
            }
        }
    }
}

/// Quantity the bands are computed for.
#[derive(Debug, Clone, PartialEq)]
pub enum Functional {
    /// Baseline survival `exp(-Lambda_0(t))` at each time.
    BaselineSurvival(Vec<f64>),
    /// Regression coefficient `beta_j`.
    Beta(usize),
    /// Values of each part, concatenated, from one set of resampled fits.
    Concat(Vec<Functional>),
}

impl Functional {
    pub fn evaluate(&self, fit: &FitResult) -> Result<Vec<f64>> {
        match self {
            Functional::BaselineSurvival(times) => times
                .iter()
                .map(|&t| Ok((-baseline_cumulative_hazard(t, &fit.params.log_hazard, &fit.grid)?).exp()))
                .collect(),
            Functional::Beta(j) => fit
                .params
                .beta
                .get(*j)
                .map(|b| vec![*b])
                .ok_or_else(|| Error::invalid(format!("no coefficient {j}"))),
            Functional::Concat(parts) => {
                let mut out = Vec::new();
                for part in parts {
                    out.extend(part.evaluate(fit)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapBands {
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
    pub failed: usize,
}

/// Largest tolerated share of failed replicates.
pub const MAX_FAILED_SHARE: f64 = 0.2;

pub fn bootstrap_ci(
    data: &Dataset,
    fit: &BootstrapFit,
    functional: &Functional,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapBands> {
    bootstrap_ci_with(data, fit, functional, replicates, alpha, seed, &CaseResampler)
}

/// Percentile bootstrap bands; replicate `b` uses stream `b` of `seed`.
pub fn bootstrap_ci_with<R: Resampler>(
    data: &Dataset,
    fit: &BootstrapFit,
    functional: &Functional,
    replicates: usize,
    alpha: f64,
    seed: u64,
    resampler: &R,
) -> Result<BootstrapBands> {
    if replicates < 2 {
        return Err(Error::invalid("the bootstrap needs at least two replicates"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let point = functional.evaluate(&fit.fit(data)?)?;
    let draws: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let idx = resampler.resample(data.len(), &mut rng);
            let sample = data.select(&idx).ok()?;
            let f = fit.fit(&sample).ok()?;
            functional.evaluate(&f).ok()
        })
        .collect();
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = replicates - ok.len();
    if failed as f64 > MAX_FAILED_SHARE * replicates as f64 || ok.is_empty() {
        return Err(Error::TooManyFailures { failed, total: replicates });
    }
    let mut lower = Vec::with_capacity(point.len());
    let mut upper = Vec::with_capacity(point.len());
    for (j, &pt) in point.iter().enumerate() {
        let mut values: Vec<f64> = ok.iter().map(|v| v[j]).collect();
        values.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&values, alpha / 2.0).min(pt));
        upper.push(quantile_sorted(&values, 1.0 - alpha / 2.0).max(pt));
    }
    Ok(BootstrapBands { point, lower, upper, replicates, failed })
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(values: &[f64], p: f64) -> f64 {
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}
