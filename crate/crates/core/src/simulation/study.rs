use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{gen_scenario_with, midpoint_transform, Baseline, BaselineModel, ScenarioSpec, TRUE_BETA};
use crate::error::{Error, Result};
use crate::inference::lr_confint;
use crate::model::{CureParams, CutGrid, Dataset};
use crate::mstep::{em_fit, FitConfig, FitResult};
use crate::ridge::{regularization_path, PathConfig};
use crate::rng::stream_rng;

/// Integration window and step for the survival-curve metrics.
pub const SURVIVAL_HORIZON: f64 = 60.0;
pub const SURVIVAL_STEP: f64 = 0.1;
/// Upper end of the hazard total-variation integral.
pub const TV_HORIZON: f64 = 90.0;
pub const WINDOWS: [(f64, f64); 2] = [(10.0, 30.0), (35.0, 55.0)];
/// Largest tolerated share of failed replicates.
pub const MAX_FAILED_SHARE: f64 = 0.1;

#[derive(Debug, Clone)]
pub enum Estimator {
    /// Cuts chosen by the adaptive ridge and BIC, then refitted.
    AdaptiveRidge { grid: CutGrid, penalties: Vec<f64>, config: PathConfig, intervals: bool },
    /// Midpoint imputation fitted on a fixed grid.
    Midpoint { grid: CutGrid, config: FitConfig, intervals: bool },
    /// Plain fit on a fixed grid.
    FixedCuts { grid: CutGrid, config: FitConfig, intervals: bool },
    /// Returns the data-generating parameters.
    Truth,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::AdaptiveRidge { .. } => "adaptive-ridge",
            Estimator::Midpoint { .. } => "midpoint",
            Estimator::FixedCuts { .. } => "fixed-cuts",
            Estimator::Truth => "truth",
        }
    }

    fn estimate(&self, data: &Dataset, spec: &ScenarioSpec, alpha: f64) -> Result<ReplicateEstimate> {
        let (fit, fitted_on, intervals, config) = match self {
            Estimator::Truth => {
                let p_hat = match spec.scenario {
                    super::Scenario::ScalarCure { p } => Some(p),
                    _ => None,
                };
                let selected_cuts = match spec.model {
                    BaselineModel::M1 => super::M1_CUTS.to_vec(),
                    BaselineModel::M2 => Vec::new(),
                };
                return Ok(ReplicateEstimate {
                    beta: TRUE_BETA.to_vec(),
                    beta_ci: Some(TRUE_BETA.iter().map(|&b| (b, b)).collect()),
                    baseline: spec.model.baseline(),
                    selected_cuts,
                    p_hat,
                    monotone: true,
                });
            }
            Estimator::AdaptiveRidge { grid, penalties, config, intervals } => {
                let path = regularization_path(data, grid, penalties, config)?;
                (path.best_fit().clone(), data.clone(), *intervals, &config.fit)
            }
            Estimator::Midpoint { grid, config, intervals } => {
                let imputed = midpoint_transform(data)?;
                (em_fit(&imputed, grid, config)?, imputed, *intervals, config)
            }
            Estimator::FixedCuts { grid, config, intervals } => (em_fit(data, grid, config)?, data.clone(), *intervals, config),
        };
        let beta_ci = if intervals {
            let k = fit.grid.n_pieces();
            let cis = (0..fit.params.beta.len())
                .map(|j| lr_confint(&fitted_on, &fit, k + j, alpha, config).map(|ci| (ci.lower, ci.upper)))
                .collect::<Result<Vec<_>>>()?;
            Some(cis)
        } else {
            None
        };
        Ok(ReplicateEstimate::from_fit(&fit, beta_ci))
    }
}

/// What one estimator produced on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub beta: Vec<f64>,
    pub beta_ci: Option<Vec<(f64, f64)>>,
    pub baseline: Baseline,
    pub selected_cuts: Vec<f64>,
    pub p_hat: Option<f64>,
    /// Observed log-likelihood never dropped across EM iterations (1e-10 slack).
    pub monotone: bool,
}

impl ReplicateEstimate {
    pub fn from_fit(fit: &FitResult, beta_ci: Option<Vec<(f64, f64)>>) -> Self {
        let p_hat = match fit.params.cure {
            CureParams::Scalar(p) => Some(p),
            _ => None,
        };
        Self {
            beta: fit.params.beta.clone(),
            beta_ci,
            baseline: Baseline::Piecewise { grid: fit.grid.clone(), log_hazard: fit.params.log_hazard.clone() },
            selected_cuts: fit.grid.interior().to_vec(),
            p_hat,
            monotone: fit.trace_is_monotone(1e-10),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientMetrics {
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Empirical standard deviation (denominator `M - 1`); `None` for `M = 1`.
    pub se: Option<f64>,
    /// Mean squared error (denominator `M`).
    pub mse: f64,
    pub cp: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub estimator: String,
    pub replicates: usize,
    pub failed: usize,
    pub beta: Vec<CoefficientMetrics>,
    pub ibias2: f64,
    /// Integrated variance with denominator `M`, so `ibias2 + ivar` is the MISE.
    pub ivar: f64,
    pub mise: f64,
    /// Mean of `int_0^90 |hat lambda_0 - lambda_0|`; piecewise truth only.
    pub tv: Option<f64>,
    /// `cut_counts[j]` replicates selected exactly `j` cuts.
    pub cut_counts: Vec<usize>,
    /// Share of replicates with at least one selected cut in each of
    /// [`WINDOWS`].
    pub window_shares: Vec<f64>,
    pub p_hat_mean: Option<f64>,
    pub p_hat_above_095: Option<f64>,
}

impl MetricReport {
    pub fn modal_cut_count(&self) -> usize {
        self.cut_counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(j, _)| j)
    }
}

fn survival_times() -> Vec<f64> {
    let steps = (SURVIVAL_HORIZON / SURVIVAL_STEP).round() as usize;
    (0..=steps).map(|i| i as f64 * SURVIVAL_STEP).collect()
}

fn trapezoid(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[values.len() - 1]))
}

/// `int_0^horizon |a(t) - b(t)| dt` for piecewise-constant hazards.
fn hazard_tv(estimate: &Baseline, truth: &Baseline, horizon: f64) -> Option<f64> {
    let (Baseline::Piecewise { grid: g1, .. }, Baseline::Piecewise { grid: g2, .. }) = (estimate, truth) else {
        return None;
    };
    let mut knots: Vec<f64> = g1.interior().iter().chain(g2.interior()).copied().filter(|&c| c < horizon).collect();
    knots.push(0.0);
    knots.push(horizon);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    Some(
        knots
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (w[1] - w[0]) * (estimate.hazard(mid) - truth.hazard(mid)).abs()
            })
            .sum(),
    )
}

/// Aggregates replicate estimates against the truth of `model`.
pub fn summarize(
    name: &str,
    estimates: &[ReplicateEstimate],
    failed: usize,
    model: BaselineModel,
    true_p: Option<f64>,
) -> MetricReport {
    let m = estimates.len();
    let mf = m as f64;
    let truth = model.baseline();
    let d = estimates.first().map_or(0, |e| e.beta.len());
    let beta = (0..d)
        .map(|j| {
            let b0 = TRUE_BETA.get(j).copied().unwrap_or(0.0);
            let values: Vec<f64> = estimates.iter().map(|e| e.beta[j]).collect();
            let mean = values.iter().sum::<f64>() / mf;
            let se = (m > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mf - 1.0)).sqrt());
            let mse = values.iter().map(|v| (v - b0).powi(2)).sum::<f64>() / mf;
            let cp = estimates.iter().all(|e| e.beta_ci.is_some()).then(|| {
                estimates
                    .iter()
                    .filter(|e| {
                        let (lo, hi) = e.beta_ci.as_ref().unwrap()[j];
                        lo <= b0 && b0 <= hi
                    })
                    .count() as f64
                    / mf
            });
            CoefficientMetrics { truth: b0, mean, bias: mean - b0, se, mse, cp }
        })
        .collect();

    let times = survival_times();
    let curves: Vec<Vec<f64>> = estimates.iter().map(|e| times.iter().map(|&t| e.baseline.survival(t)).collect()).collect();
    let mean_curve: Vec<f64> = (0..times.len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / mf).collect();
    let bias2: Vec<f64> = times.iter().zip(&mean_curve).map(|(&t, s)| (s - truth.survival(t)).powi(2)).collect();
    let ibias2 = trapezoid(&bias2, SURVIVAL_STEP);
    let ivar = curves
        .iter()
        .map(|c| {
            let sq: Vec<f64> = c.iter().zip(&mean_curve).map(|(a, b)| (a - b).powi(2)).collect();
            trapezoid(&sq, SURVIVAL_STEP)
        })
        .sum::<f64>()
        / mf;
    let tv = estimates
        .iter()
        .map(|e| hazard_tv(&e.baseline, &truth, TV_HORIZON))
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / mf);

    let max_cuts = estimates.iter().map(|e| e.selected_cuts.len()).max().unwrap_or(0);
    let mut cut_counts = vec![0; max_cuts + 1];
    for e in estimates {
        cut_counts[e.selected_cuts.len()] += 1;
    }
    let window_shares = WINDOWS
        .iter()
        .map(|&(lo, hi)| {
            estimates.iter().filter(|e| e.selected_cuts.iter().any(|&c| c >= lo && c <= hi)).count() as f64 / mf
        })
        .collect();
    let p_values: Vec<f64> = estimates.iter().filter_map(|e| e.p_hat).collect();
    let (p_hat_mean, p_hat_above_095) = if p_values.len() == m && m > 0 {
        (
            Some(p_values.iter().sum::<f64>() / mf),
            Some(p_values.iter().filter(|&&p| p > 0.95).count() as f64 / mf),
        )
    } else {
        (None, None)
    };
    let _ = true_p;
    MetricReport {
        estimator: name.to_string(),
        replicates: m,
        failed,
        beta,
        ibias2,
        ivar,
        mise: ibias2 + ivar,
        tv,
        cut_counts,
        window_shares,
        p_hat_mean,
        p_hat_above_095,
    }
}

/// Per-estimator results of a study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub spec: ScenarioSpec,
    pub reports: Vec<MetricReport>,
    /// `records[e][m]`: estimator `e` on replicate `m` (`None` on failure).
    pub records: Vec<Vec<Option<ReplicateEstimate>>>,
}

/// Monte Carlo study: replicate `m` uses stream `m` of `spec.seed`, and every
/// estimator sees the same replicate data.
pub fn run_study(spec: &ScenarioSpec, replicates: usize, estimators: &[Estimator], alpha: f64) -> Result<StudyResult> {
    if replicates == 0 {
        return Err(Error::invalid("at least one replicate is needed"));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators"));
    }
    let per_replicate: Vec<Vec<Option<ReplicateEstimate>>> = (0..replicates)
        .into_par_iter()
        .map(|m| {
            let mut rng = stream_rng(spec.seed, m as u64);
            match gen_scenario_with(spec, &mut rng) {
                Ok((data, _)) => estimators.iter().map(|e| e.estimate(&data, spec, alpha).ok()).collect(),
                Err(_) => vec![None; estimators.len()],
            }
        })
        .collect();
    let true_p = match spec.scenario {
        super::Scenario::ScalarCure { p } => Some(p),
        _ => None,
    };
    let mut reports = Vec::with_capacity(estimators.len());
    let mut records = Vec::with_capacity(estimators.len());
    for (e, est) in estimators.iter().enumerate() {
        let column: Vec<Option<ReplicateEstimate>> = per_replicate.iter().map(|r| r[e].clone()).collect();
        let ok: Vec<ReplicateEstimate> = column.iter().flatten().cloned().collect();
        let failed = replicates - ok.len();
        if failed as f64 > MAX_FAILED_SHARE * replicates as f64 || ok.is_empty() {
            return Err(Error::TooManyFailures { failed, total: replicates });
        }
        reports.push(summarize(est.name(), &ok, failed, spec.model, true_p));
        records.push(column);
    }
    Ok(StudyResult { spec: *spec, reports, records })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.5}"))
}

impl StudyResult {
    /// Plain-text tables: coefficients, survival curve metrics, cut detection.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let s = &self.spec;
        let _ = writeln!(out, "# model {:?} scenario {:?} n {} seed {}", s.model, s.scenario, s.n, s.seed);
        let _ = writeln!(out, "estimator\tparam\ttruth\tmean\tbias\tse\tmse\tcp");
        for r in &self.reports {
            for (j, b) in r.beta.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\tbeta{}\t{:.5}\t{:.5}\t{:.5}\t{}\t{:.5}\t{}",
                    r.estimator,
                    j + 1,
                    b.truth,
                    b.mean,
                    b.bias,
                    fmt_opt(b.se),
                    b.mse,
                    fmt_opt(b.cp)
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "estimator\treplicates\tfailed\tibias2\tivar\tmise\ttv\tp_hat_mean");
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.5}\t{:.5}\t{:.5}\t{}\t{}",
                r.estimator,
                r.replicates,
                r.failed,
                r.ibias2,
                r.ivar,
                r.mise,
                fmt_opt(r.tv),
                fmt_opt(r.p_hat_mean)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "estimator\tcut_counts\twindow_10_30\twindow_35_55");
        for r in &self.reports {
            let counts = r.cut_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
            let _ = writeln!(out, "{}\t{}\t{:.3}\t{:.3}", r.estimator, counts, r.window_shares[0], r.window_shares[1]);
        }
        out
    }

    /// One JSON object per line and per (estimator, replicate).
    pub fn to_records(&self) -> Result<String> {
        let mut out = String::new();
        for (e, column) in self.records.iter().enumerate() {
            for (m, rec) in column.iter().enumerate() {
                let line = serde_json::json!({
                    "estimator": self.reports[e].estimator,
                    "replicate": m,
                    "estimate": rec,
                });
                out.push_str(&serde_json::to_string(&line)?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}
