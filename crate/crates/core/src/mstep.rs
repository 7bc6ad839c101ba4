//! M-step and the (G)EM driver for a fixed cut grid.
//!
//! Without covariates and penalty the baseline update is explicit. Otherwise
//! the M-step takes damped Newton steps on Q; the baseline block of the
//! Hessian is diagonal (tridiagonal once penalized), so every step is solved
//! through the Schur complement in O(K). The cure part of Q separates and is
//! maximized on its own.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::{cure_q, EStepBundle};
use crate::linalg::{dense_solve, newton_step_schur, StructuredHessian, SymTridiag};
use crate::model::{dot, logistic, CureParams, CutGrid, Dataset, ModelParams};
use crate::ridge::PenaltyState;

/// Which cure-fraction model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CureModel {
    None,
    /// One susceptible probability `p` for everybody.
    Scalar,
    /// Logistic link on the cure covariates `X`.
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Stop when the relative change of the observed log-likelihood drops
    /// below this value.
    pub tol: f64,
    pub max_em_iter: usize,
    pub max_newton_per_m: usize,
    /// Log-hazards falling below this value are pinned there.
    pub log_floor: f64,
    pub cure: CureModel,
    /// Stop the inner Newton loop at the first step that increases Q.
    pub gem: bool,
    /// Use the explicit update when there are no covariates and no penalty.
    pub closed_form: bool,
    /// Starting value of the scalar susceptible probability.
    pub initial_p: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_em_iter: 500,
            max_newton_per_m: 25,
            log_floor: -30.0,
            cure: CureModel::None,
            gem: true,
            closed_form: true,
            initial_p: 0.9,
        }
    }
}

/// Optional knobs of a single fit.
#[derive(Debug, Clone, Default)]
pub struct FitOptions<'a> {
    /// Starting parameters; defaults to zeros (and `initial_p`).
    pub init: Option<ModelParams>,
    /// Components of the flat `(a, beta)` vector held fixed at a value.
    pub fixed: Vec<(usize, f64)>,
    pub penalty: Option<&'a PenaltyState>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    pub grid: CutGrid,
    /// Observed-data log-likelihood at `params` (never penalized).
    pub obs_loglik: f64,
    pub n_em_iters: usize,
    pub converged: bool,
    /// Objective after each iteration: the observed log-likelihood, minus the
    /// penalty for penalized fits. Starts with the value at the initial point.
    pub trace: Vec<f64>,
    /// Pieces whose log-hazard was pinned at the floor.
    pub pinned: Vec<usize>,
}

impl FitResult {
    /// Whether the trace never decreases by more than `slack` relative to
    /// its magnitude.
    pub fn trace_is_monotone(&self, slack: f64) -> bool {
        self.trace.windows(2).all(|w| w[1] >= w[0] - slack * (1.0 + w[0].abs()))
    }
}

/// Starting point: zero log-hazards and coefficients.
pub fn initial_params(k: usize, data: &Dataset, config: &FitConfig) -> Result<ModelParams> {
    let cure = match config.cure {
        CureModel::None => CureParams::None,
        CureModel::Scalar => CureParams::Scalar(config.initial_p),
        CureModel::Logistic => {
            if data.dx() == 0 {
                return Err(Error::invalid("logistic cure model needs cure covariates"));
            }
            CureParams::Logistic(vec![0.0; data.dx()])
        }
    };
    Ok(ModelParams::new(vec![0.0; k], vec![0.0; data.dz()]).with_cure(cure))
}

/// Explicit baseline update without covariates:
/// `exp(a_k) = (A_k + O_k) / (w_k sum_{l>k} A_l + B_k + R_k)` with pi weights.
/// Pieces with no events get `log_floor`.
pub fn np_closed_form(bundle: &EStepBundle, log_floor: f64) -> Vec<f64> {
    let events = bundle.event_totals();
    let exposure = bundle.exposure_totals();
    events
        .iter()
        .zip(&exposure)
        .map(|(&n, &e)| {
            debug_assert!(!(n > 0.0 && e <= 0.0), "events without exposure");
            if n > 0.0 && e > 0.0 {
                (n / e).ln().max(log_floor)
            } else {
                log_floor
            }
        })
        .collect()
}

/// Gradient and Hessian of Q in `(a, beta)` at `theta`.
pub fn q_score_hessian(
    theta: &ModelParams,
    bundle: &EStepBundle,
    data: &Dataset,
    grid: &CutGrid,
) -> Result<(Vec<f64>, StructuredHessian)> {
    theta.check(grid)?;
    let k = grid.n_pieces();
    let d = data.dz();
    let hazards: Vec<f64> = theta.log_hazard.iter().map(|a| a.exp()).collect();
    let mut grad = vec![0.0; k + d];
    let mut diag = vec![0.0; k];
    let mut cross = DMatrix::zeros(k, d);
    let mut dense = DMatrix::zeros(d, d);
    for (i, obs) in data.observations().iter().enumerate() {
        let w = bundle.pi()[i];
        if w == 0.0 {
            continue;
        }
        let scale = w * crate::model::rate(dot(&theta.beta, &obs.z))?;
        let ev = bundle.events_row(i);
        let ex = bundle.exposure_row(i);
        let mut occ = 0.0;
        let mut mass = 0.0;
        for kk in 0..k {
            let m = scale * hazards[kk] * ex[kk];
            grad[kk] += w * ev[kk] - m;
            diag[kk] -= m;
            occ += w * ev[kk];
            mass += m;
            if m != 0.0 {
                for (j, zj) in obs.z.iter().enumerate() {
                    cross[(kk, j)] -= zj * m;
                }
            }
        }
        for (j, zj) in obs.z.iter().enumerate() {
            grad[k + j] += zj * (occ - mass);
            for (l, zl) in obs.z.iter().enumerate() {
                dense[(j, l)] -= zj * zl * mass;
            }
        }
    }
    Ok((grad, StructuredHessian { a_block: SymTridiag::diagonal(diag), cross, dense }))
}

/// Gradient and Hessian of the logistic part of Q in `gamma`.
pub fn cure_score_hessian(gamma: &[f64], bundle: &EStepBundle, data: &Dataset) -> (Vec<f64>, DMatrix<f64>) {
    let dx = gamma.len();
    let mut g = vec![0.0; dx];
    let mut h = DMatrix::zeros(dx, dx);
    for (obs, &w) in data.observations().iter().zip(bundle.pi()) {
        let p = logistic(dot(gamma, &obs.x));
        for j in 0..dx {
            g[j] += obs.x[j] * (w - p);
            for l in 0..dx {
                h[(j, l)] -= obs.x[j] * obs.x[l] * p * (1.0 - p);
            }
        }
    }
    (g, h)
}

/// `(a, beta)` part of Q, i.e. Q without the cure Bernoulli terms.
pub(crate) fn q_hazard_part(
    log_hazard: &[f64],
    beta: &[f64],
    bundle: &EStepBundle,
    data: &Dataset,
) -> f64 {
    let k = log_hazard.len();
    let hazards: Vec<f64> = log_hazard.iter().map(|a| a.exp()).collect();
    let mut q = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        let w = bundle.pi()[i];
        if w == 0.0 {
            continue;
        }
        let eta = dot(beta, &obs.z);
        let ev = bundle.events_row(i);
        let ex = bundle.exposure_row(i);
        let mut occ = 0.0;
        let mut cum = 0.0;
        for kk in 0..k {
            if ev[kk] != 0.0 {
                occ += ev[kk] * (log_hazard[kk] + eta);
            }
            cum += hazards[kk] * ex[kk];
        }
        q += w * (occ - eta.exp() * cum);
    }
    q
}

/// Everything the M-step needs besides the bundle.
struct MStepContext<'a> {
    data: &'a Dataset,
    grid: &'a CutGrid,
    config: &'a FitConfig,
    penalty: Option<&'a PenaltyState>,
    /// Flat `(a, beta)` indices excluded from updates.
    frozen: Vec<bool>,
}

impl MStepContext<'_> {
    fn objective(&self, log_hazard: &[f64], beta: &[f64], bundle: &EStepBundle) -> f64 {
        let q = q_hazard_part(log_hazard, beta, bundle, self.data);
        match self.penalty {
            Some(p) => q - p.penalty_value(log_hazard),
            None => q,
        }
    }

    fn hazard_step(&self, theta: &mut ModelParams, bundle: &EStepBundle) -> Result<()> {
        let k = self.grid.n_pieces();
        let d = self.data.dz();
        if d == 0 && self.penalty.is_none() && self.config.closed_form {
            let update = np_closed_form(bundle, self.config.log_floor);
            for (kk, a) in update.into_iter().enumerate() {
                if !self.frozen[kk] {
                    theta.log_hazard[kk] = a;
                }
            }
            return Ok(());
        }
        let mut current = self.objective(&theta.log_hazard, &theta.beta, bundle);
        for _ in 0..self.config.max_newton_per_m.max(1) {
            let (mut grad, mut hess) = q_score_hessian(theta, bundle, self.data, self.grid)?;
            if let Some(p) = self.penalty {
                p.apply(&theta.log_hazard, &mut grad, &mut hess);
            }
            mask_frozen(&self.frozen, k, &mut grad, &mut hess);
            let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gnorm <= 1e-12 * (1.0 + current.abs()) {
                break;
            }
            let direction = match newton_step_schur(&grad, &hess) {
                Ok(step) if step.iter().all(|v| v.is_finite()) => Some(step),
                _ => None,
            };
            let mut accepted = None;
            if let Some(step) = &direction {
                let gain = 0.5 * grad.iter().zip(step).map(|(g, s)| g * s).sum::<f64>();
                if gain.abs() <= 64.0 * f64::EPSILON * (1.0 + current.abs()) {
                    // the remaining ascent is below the resolution of Q
                    for (kk, s) in step[..k].iter().enumerate() {
                        theta.log_hazard[kk] += s;
                    }
                    for (j, s) in step[k..].iter().enumerate() {
                        theta.beta[j] += s;
                    }
                    break;
                }
                accepted = self.line_search(theta, step, current, bundle);
            }
            if accepted.is_none() {
                // small gradient step
                let scale = 1e-3 / gnorm.max(1.0);
                let step: Vec<f64> = grad.iter().map(|g| g * scale).collect();
                accepted = self.line_search(theta, &step, current, bundle);
            }
            match accepted {
                Some((a, b, value)) => {
                    theta.log_hazard = a;
                    theta.beta = b;
                    current = value;
                    if self.config.gem {
                        break;
                    }
                }
                None => break,
            }
        }
        Ok(())
    }

    fn line_search(
        &self,
        theta: &ModelParams,
        step: &[f64],
        current: f64,
        bundle: &EStepBundle,
    ) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let k = self.grid.n_pieces();
        let mut t = 1.0;
        for _ in 0..=10 {
            let a: Vec<f64> = theta.log_hazard.iter().zip(&step[..k]).map(|(x, s)| x + t * s).collect();
            let b: Vec<f64> = theta.beta.iter().zip(&step[k..]).map(|(x, s)| x + t * s).collect();
            let value = self.objective(&a, &b, bundle);
            if value.is_finite() && value >= current {
                return Some((a, b, value));
            }
            t *= 0.5;
        }
        None
    }

    fn cure_step(&self, theta: &mut ModelParams, bundle: &EStepBundle) {
        match &mut theta.cure {
            CureParams::None => {}
            CureParams::Scalar(p) => {
                let total: f64 = bundle.pi().iter().sum();
                *p = (total / bundle.n() as f64).clamp(1e-12, 1.0);
            }
            CureParams::Logistic(gamma) => {
                let q_of = |g: &[f64]| cure_q(&CureParams::Logistic(g.to_vec()), self.data, bundle.pi());
                let mut current = q_of(gamma);
                for _ in 0..self.config.max_newton_per_m.max(1) {
                    let (grad, hess) = cure_score_hessian(gamma, bundle, self.data);
                    let Some(step) = dense_solve(&(-hess), &grad) else { break };
                    let mut t = 1.0;
                    let mut moved = false;
                    for _ in 0..=10 {
                        let cand: Vec<f64> = gamma.iter().zip(&step).map(|(g, s)| g + t * s).collect();
                        let value = q_of(&cand);
                        if value.is_finite() && value > current {
                            *gamma = cand;
                            current = value;
                            moved = true;
                            break;
                        }
                        t *= 0.5;
                    }
                    if !moved || self.config.gem {
                        break;
                    }
                }
            }
        }
    }
}

fn mask_frozen(frozen: &[bool], k: usize, grad: &mut [f64], hess: &mut StructuredHessian) {
    for (idx, _) in frozen.iter().enumerate().filter(|(_, &f)| f) {
        grad[idx] = 0.0;
        if idx < k {
            hess.a_block.diag[idx] = -1.0;
            if idx > 0 {
                hess.a_block.off[idx - 1] = 0.0;
            }
            if idx + 1 < k {
                hess.a_block.off[idx] = 0.0;
            }
            hess.cross.row_mut(idx).fill(0.0);
        } else {
            let j = idx - k;
            hess.cross.column_mut(j).fill(0.0);
            hess.dense.row_mut(j).fill(0.0);
            hess.dense.column_mut(j).fill(0.0);
            hess.dense[(j, j)] = -1.0;
        }
    }
}

/// Pieces that no subject can ever be exposed in: beyond every finite
/// right end when there are no right-censored subjects.
fn structurally_empty(data: &Dataset, grid: &CutGrid) -> Vec<usize> {
    let horizon = data
        .observations()
        .iter()
        .map(|o| o.right)
        .fold(0.0f64, f64::max);
    (0..grid.n_pieces()).filter(|&k| grid.lower(k) >= horizon).collect()
}

/// Fits the model on a fixed grid by (G)EM.
pub fn em_fit(data: &Dataset, grid: &CutGrid, config: &FitConfig) -> Result<FitResult> {
    em_fit_with(data, grid, config, &FitOptions::default())
}

pub fn em_fit_with(
    data: &Dataset,
    grid: &CutGrid,
    config: &FitConfig,
    options: &FitOptions<'_>,
) -> Result<FitResult> {
    let k = grid.n_pieces();
    let d = data.dz();
    let mut theta = match &options.init {
        Some(p) => p.clone(),
        None => initial_params(k, data, config)?,
    };
    theta.check(grid)?;
    if theta.beta.len() != d {
        return Err(Error::Dimension { what: "beta vs hazard covariates", expected: d, got: theta.beta.len() });
    }
    if let Some(p) = options.penalty {
        if p.weights.len() + 1 != k {
            return Err(Error::Dimension { what: "penalty weights", expected: k - 1, got: p.weights.len() });
        }
    }
    let mut frozen = vec![false; k + d];
    for &(idx, value) in &options.fixed {
        if idx >= k + d {
            return Err(Error::invalid(format!("fixed component {idx} is outside (a, beta)")));
        }
        frozen[idx] = true;
        if idx < k {
            theta.log_hazard[idx] = value;
        } else {
            theta.beta[idx - k] = value;
        }
    }
    let mut pinned = Vec::new();
    for kk in structurally_empty(data, grid) {
        if !frozen[kk] {
            frozen[kk] = true;
            theta.log_hazard[kk] = config.log_floor;
            pinned.push(kk);
        }
    }
    let mut ctx = MStepContext { data, grid, config, penalty: options.penalty, frozen };

    let penalty_of = |a: &[f64]| options.penalty.map_or(0.0, |p| p.penalty_value(a));
    let mut bundle = EStepBundle::build(data, &theta, grid)?;
    let mut objective = bundle.obs_loglik() - penalty_of(&theta.log_hazard);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iters = 0;
    while iters < config.max_em_iter {
        iters += 1;
        let mut next = theta.clone();
        ctx.cure_step(&mut next, &bundle);
        ctx.hazard_step(&mut next, &bundle)?;
        for kk in 0..k {
            if !ctx.frozen[kk] && next.log_hazard[kk] < config.log_floor {
                next.log_hazard[kk] = config.log_floor;
                ctx.frozen[kk] = true;
                pinned.push(kk);
            }
        }
        let next_bundle = EStepBundle::build(data, &next, grid)?;
        let next_objective = next_bundle.obs_loglik() - penalty_of(&next.log_hazard);
        trace.push(next_objective);
        let change = (next_objective - objective).abs() / (objective.abs() + 1.0);
        theta = next;
        bundle = next_bundle;
        objective = next_objective;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    pinned.sort_unstable();
    Ok(FitResult {
        obs_loglik: bundle.obs_loglik(),
        params: theta,
        grid: grid.clone(),
        n_em_iters: iters,
        converged,
        trace,
        pinned,
    })
}

/// Full maximization of Q for one bundle by undamped-until-stationary Newton
/// (no GEM early stop). Exposed for checking the explicit update.
pub fn maximize_q_newton(
    theta: &ModelParams,
    bundle: &EStepBundle,
    data: &Dataset,
    grid: &CutGrid,
    penalty: Option<&PenaltyState>,
) -> Result<ModelParams> {
    let config = FitConfig { gem: false, closed_form: false, max_newton_per_m: 200, ..FitConfig::default() };
    let ctx = MStepContext {
        data,
        grid,
        config: &config,
        penalty,
        frozen: vec![false; grid.n_pieces() + data.dz()],
    };
    let mut out = theta.clone();
    ctx.cure_step(&mut out, bundle);
    ctx.hazard_step(&mut out, bundle)?;
    Ok(out)
}

/// Dense Newton direction, used to cross-check the Schur path.
pub fn newton_step_dense(gradient: &[f64], hessian: &StructuredHessian) -> Result<Vec<f64>> {
    let info = -hessian.to_dense();
    dense_solve(&info, gradient).ok_or_else(|| Error::SingularHessian("dense Newton system".into()))
}
