//! Adaptive ridge selection of the cuts.
//!
//! For each penalty the weighted fused-ridge problem is fitted by penalized
//! EM, the weights are re-estimated from the fit, and the two steps repeat
//! until the set of retained cuts stops changing. The retained cuts are then
//! refitted without penalty and scored by BIC.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::StructuredHessian;
use crate::mstep::{em_fit, em_fit_with, FitConfig, FitOptions, FitResult};
use crate::model::{CutGrid, Dataset, ModelParams};

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// A cut is kept when `w_k (a_{k+1} - a_k)^2` exceeds this.
pub const SELECTION_THRESHOLD: f64 = 0.99;

/// Tuning parameter and current weights of the fused ridge penalty
/// `pen / 2 * sum_k w_k (a_{k+1} - a_k)^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyState {
    pub pen: f64,
    pub weights: Vec<f64>,
    pub epsilon: f64,
}

impl PenaltyState {
    /// Unit weights for `k` pieces.
    pub fn new(k: usize, pen: f64, epsilon: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("the penalty needs at least two pieces"));
        }
        if !(pen >= 0.0 && pen.is_finite()) {
            return Err(Error::invalid(format!("penalty must be finite and nonnegative, got {pen}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(Self { pen, weights: vec![1.0; k - 1], epsilon })
    }

    pub fn penalty_value(&self, log_hazard: &[f64]) -> f64 {
        let sum: f64 = log_hazard
            .windows(2)
            .zip(&self.weights)
            .map(|(a, w)| w * (a[1] - a[0]).powi(2))
            .sum();
        0.5 * self.pen * sum
    }

    /// Adds the penalty's gradient and (tridiagonal) Hessian, both with the
    /// sign of the penalized objective, to the unpenalized ones.
    pub fn apply(&self, log_hazard: &[f64], gradient: &mut [f64], hessian: &mut StructuredHessian) {
        let k = log_hazard.len();
        for j in 0..k.saturating_sub(1) {
            let pw = self.pen * self.weights[j];
            let diff = log_hazard[j + 1] - log_hazard[j];
            gradient[j] += pw * diff;
            gradient[j + 1] -= pw * diff;
            hessian.a_block.diag[j] -= pw;
            hessian.a_block.diag[j + 1] -= pw;
            hessian.a_block.off[j] += pw;
        }
    }
}

/// Gradient and Hessian of the penalized Q.
pub fn penalized_score_hessian(
    theta: &ModelParams,
    bundle: &crate::estep::EStepBundle,
    data: &Dataset,
    grid: &CutGrid,
    state: &PenaltyState,
) -> Result<(Vec<f64>, StructuredHessian)> {
    if state.weights.len() + 1 != grid.n_pieces() {
        return Err(Error::Dimension { what: "penalty weights", expected: grid.n_pieces() - 1, got: state.weights.len() });
    }
    let (mut g, mut h) = crate::mstep::q_score_hessian(theta, bundle, data, grid)?;
    state.apply(&theta.log_hazard, &mut g, &mut h);
    Ok((g, h))
}

/// `w_k = 1 / ((a_{k+1} - a_k)^2 + epsilon^2)`.
pub fn weight_update(a_hat: &[f64], epsilon: f64) -> Vec<f64> {
    a_hat.windows(2).map(|a| 1.0 / ((a[1] - a[0]).powi(2) + epsilon * epsilon)).collect()
}

/// Indices of the interior cuts passing the threshold.
pub fn selected_cut_indices(a_hat: &[f64], weights: &[f64]) -> Vec<usize> {
    a_hat
        .windows(2)
        .zip(weights)
        .enumerate()
        .filter(|(_, (a, w))| *w * (a[1] - a[0]).powi(2) > SELECTION_THRESHOLD)
        .map(|(k, _)| k)
        .collect()
}

pub fn select_cuts(a_hat: &[f64], weights: &[f64], grid: &CutGrid) -> CutGrid {
    grid.subgrid(&selected_cut_indices(a_hat, weights))
}

pub fn bic(obs_loglik: f64, m: usize, n: usize) -> f64 {
    -2.0 * obs_loglik + m as f64 * (n as f64).ln()
}

/// `count` penalties equally spaced on the log scale over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(Error::invalid(format!("bad penalty range {lo}:{hi}:{count}")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect())
}

/// 200 values from 0.1 to 10 000.
pub fn default_penalties() -> Vec<f64> {
    log_spaced(0.1, 1e4, 200).expect("valid constant range")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathConfig {
    pub fit: FitConfig,
    pub epsilon: f64,
    pub max_weight_iter: usize,
    /// Start each penalty from the previous penalty's estimate and weights.
    pub warm_start: bool,
    /// Keep the weights at one (plain ridge).
    pub ridge_only: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            epsilon: DEFAULT_EPSILON,
            max_weight_iter: 50,
            warm_start: true,
            ridge_only: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathEntry {
    pub pen: f64,
    /// Penalized estimate after the last weight iteration.
    pub penalized_log_hazard: Vec<f64>,
    pub weight_iterations: usize,
    pub selected: Vec<usize>,
    pub selected_cuts: CutGrid,
    /// Parameter count of the refitted model.
    pub m: usize,
    /// Index into [`PathResult::refits`].
    pub refit: Option<usize>,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub grid: CutGrid,
    pub n: usize,
    pub entries: Vec<PathEntry>,
    /// One unpenalized refit per distinct selected cut set.
    pub refits: Vec<FitResult>,
    pub best_index: usize,
}

impl PathResult {
    pub fn best(&self) -> &PathEntry {
        &self.entries[self.best_index]
    }

    pub fn best_fit(&self) -> &FitResult {
        &self.refits[self.best().refit.expect("best entry has a refit")]
    }

    /// Whitespace-separated table, one row per penalty.
    pub fn to_columns(&self) -> String {
        let k = self.grid.n_pieces();
        let mut out = String::from("pen\tn_cuts\tcuts\tm\tloglik\tbic");
        for j in 0..k {
            let _ = write!(out, "\ta{}", j + 1);
        }
        out.push('\n');
        for e in &self.entries {
            let cuts = if e.selected_cuts.interior().is_empty() {
                "-".to_string()
            } else {
                e.selected_cuts.interior().iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(",")
            };
            let ll = e.refit.map_or(f64::NAN, |r| self.refits[r].obs_loglik);
            let _ = write!(
                out,
                "{:.6e}\t{}\t{}\t{}\t{:.6}\t{:.6}",
                e.pen,
                e.selected.len(),
                cuts,
                e.m,
                ll,
                e.bic.unwrap_or(f64::NAN)
            );
            for a in &e.penalized_log_hazard {
                let _ = write!(out, "\t{a:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Penalized fit at one penalty with weight iteration. Returns the final
/// parameters, weights, the selection and the number of weight iterations.
fn adaptive_fit(
    data: &Dataset,
    grid: &CutGrid,
    config: &PathConfig,
    state: &mut PenaltyState,
    init: Option<ModelParams>,
) -> Result<(ModelParams, Vec<usize>, usize)> {
    let mut theta = init;
    let mut previous: Option<Vec<usize>> = None;
    let rounds = if config.ridge_only { 1 } else { config.max_weight_iter.max(1) };
    for round in 1..=rounds {
        let options = FitOptions { init: theta.take(), fixed: Vec::new(), penalty: Some(state) };
        let fit = em_fit_with(data, grid, &config.fit, &options)?;
        let a = &fit.params.log_hazard;
        let selection = if config.ridge_only {
            selected_cut_indices(a, &weight_update(a, state.epsilon))
        } else {
            state.weights = weight_update(a, state.epsilon);
            selected_cut_indices(a, &state.weights)
        };
        theta = Some(fit.params);
        if config.ridge_only || previous.as_ref() == Some(&selection) {
            return Ok((theta.unwrap(), selection, round));
        }
        previous = Some(selection);
    }
    Ok((theta.unwrap(), previous.unwrap_or_default(), rounds))
}

/// Runs the adaptive ridge over `penalties` and picks the model with the
/// smallest BIC.
pub fn regularization_path(
    data: &Dataset,
    grid: &CutGrid,
    penalties: &[f64],
    config: &PathConfig,
) -> Result<PathResult> {
    if grid.n_pieces() < 2 {
        return Err(Error::invalid("the path needs a grid with at least one cut"));
    }
    if penalties.is_empty() || penalties.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::invalid("penalties must be nonempty and sorted ascending"));
    }
    let k = grid.n_pieces();
    let n = data.len();
    let extra = data.dz() + cure_param_count(data, &config.fit);
    let mut entries = Vec::with_capacity(penalties.len());
    let mut refits: Vec<FitResult> = Vec::new();
    let mut cache: HashMap<Vec<usize>, std::result::Result<usize, String>> = HashMap::new();
    let mut state = PenaltyState::new(k, penalties[0], config.epsilon)?;
    let mut warm: Option<ModelParams> = None;

    for &pen in penalties {
        if !config.warm_start {
            state = PenaltyState::new(k, pen, config.epsilon)?;
            warm = None;
        }
        state.pen = pen;
        let fitted = adaptive_fit(data, grid, config, &mut state, warm.clone());
        let (theta, selected, rounds) = match fitted {
            Ok(v) => v,
            Err(e) => {
                entries.push(PathEntry {
                    pen,
                    penalized_log_hazard: Vec::new(),
                    weight_iterations: 0,
                    selected: Vec::new(),
                    selected_cuts: grid.clone(),
                    m: 0,
                    refit: None,
                    bic: None,
                    error: Some(e.to_string()),
                });
                // restart the chain from scratch after a failure
                state = PenaltyState::new(k, pen, config.epsilon)?;
                warm = None;
                continue;
            }
        };
        let selected_cuts = grid.subgrid(&selected);
        let m = selected.len() + 1 + extra;
        let refit = cache
            .entry(selected.clone())
            .or_insert_with(|| match em_fit(data, &selected_cuts, &config.fit) {
                Ok(fit) => {
                    refits.push(fit);
                    Ok(refits.len() - 1)
                }
                Err(e) => Err(e.to_string()),
            })
            .clone();
        let (refit, bic_value, error) = match refit {
            Ok(idx) => (Some(idx), Some(bic(refits[idx].obs_loglik, m, n)), None),
            Err(msg) => (None, None, Some(msg)),
        };
        entries.push(PathEntry {
            pen,
            penalized_log_hazard: theta.log_hazard.clone(),
            weight_iterations: rounds,
            selected,
            selected_cuts,
            m,
            refit,
            bic: bic_value,
            error,
        });
        warm = Some(theta);
    }

    let best_index = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.bic.map(|b| (i, b)))
        .fold(None, |best: Option<(usize, f64)>, (i, b)| match best {
            Some((_, bb)) if bb <= b => best,
            _ => Some((i, b)),
        })
        .map(|(i, _)| i)
        .ok_or(Error::PathFailed)?;
    Ok(PathResult { grid: grid.clone(), n, entries, refits, best_index })
}

fn cure_param_count(data: &Dataset, config: &FitConfig) -> usize {
    match config.cure {
        crate::mstep::CureModel::None => 0,
        crate::mstep::CureModel::Scalar => 1,
        crate::mstep::CureModel::Logistic => data.dx(),
    }
}
