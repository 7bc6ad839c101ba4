use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estep::{EStepBundle, MIN_INTERVAL_MASS};
use crate::model::{dot, rate, CureParams, CutGrid, Dataset, ModelParams};

/// Observed log-likelihood with its gradient and Hessian in `(a, beta)`.
#[derive(Debug, Clone)]
pub struct ObservedModelFunctions {
    pub loglik: f64,
    pub score: Vec<f64>,
    pub hessian: DMatrix<f64>,
}

/// Observed-data log-likelihood, `-inf` when some subject's interval has
/// (numerically) zero probability.
pub fn observed_loglik(theta: &ModelParams, data: &Dataset, grid: &CutGrid) -> Result<f64> {
    match EStepBundle::build(data, theta, grid) {
        Ok(bundle) => Ok(bundle.obs_loglik()),
        Err(Error::DegenerateInterval { .. }) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    }
}

/// Adds `scale * H(g, cum)` where `H` is the Hessian of the cumulative hazard
/// `Lambda(t)`, given `g_k = d Lambda / d a_k` and `cum = Lambda(t)`.
fn add_lambda_hessian(h: &mut DMatrix<f64>, scale: f64, g: &[f64], cum: f64, z: &[f64]) {
    let k = g.len();
    for (kk, &gk) in g.iter().enumerate() {
        if gk == 0.0 {
            continue;
        }
        h[(kk, kk)] += scale * gk;
        for (j, &zj) in z.iter().enumerate() {
            h[(kk, k + j)] += scale * gk * zj;
            h[(k + j, kk)] += scale * gk * zj;
        }
    }
    for (j, &zj) in z.iter().enumerate() {
        for (l, &zl) in z.iter().enumerate() {
            h[(k + j, k + l)] += scale * zj * zl * cum;
        }
    }
}

/// Analytic score and Hessian of the observed log-likelihood (no cure
/// fraction).
pub fn observed_score_hessian(theta: &ModelParams, data: &Dataset, grid: &CutGrid) -> Result<ObservedModelFunctions> {
    theta.check(grid)?;
    if !matches!(theta.cure, CureParams::None) {
        return Err(Error::invalid("observed Hessian is only available without a cure fraction"));
    }
    if theta.beta.len() != data.dz() {
        return Err(Error::Dimension { what: "beta vs hazard covariates", expected: data.dz(), got: theta.beta.len() });
    }
    let k = grid.n_pieces();
    let d = data.dz();
    let p = k + d;
    let hazards: Vec<f64> = theta.log_hazard.iter().map(|a| a.exp()).collect();
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut hess = DMatrix::zeros(p, p);
    let mut g_left = vec![0.0; k];
    let mut g_diff = vec![0.0; k];
    let mut diff_full = vec![0.0; p];

    for (i, obs) in data.observations().iter().enumerate() {
        let eta = dot(&theta.beta, &obs.z);
        let scale = rate(eta)?;
        let mut cum_left = 0.0;
        for kk in 0..k {
            g_left[kk] = scale * hazards[kk] * grid.exposure(obs.left, kk);
            cum_left += g_left[kk];
        }
        if obs.is_exact() {
            let kt = grid.piece_index(obs.left);
            loglik += theta.log_hazard[kt] + eta - cum_left;
            score[kt] += 1.0;
            for (j, &zj) in obs.z.iter().enumerate() {
                score[k + j] += zj * (1.0 - cum_left);
            }
            for kk in 0..k {
                score[kk] -= g_left[kk];
            }
            add_lambda_hessian(&mut hess, -1.0, &g_left, cum_left, &obs.z);
            continue;
        }
        loglik -= cum_left;
        for kk in 0..k {
            score[kk] -= g_left[kk];
        }
        for (j, &zj) in obs.z.iter().enumerate() {
            score[k + j] -= zj * cum_left;
        }
        add_lambda_hessian(&mut hess, -1.0, &g_left, cum_left, &obs.z);
        if obs.right.is_infinite() {
            continue;
        }
        let mut gap = 0.0;
        for kk in 0..k {
            let du = grid.exposure(obs.right, kk) - grid.exposure(obs.left, kk);
            g_diff[kk] = scale * hazards[kk] * du;
            gap += g_diff[kk];
        }
        let mass = -(-gap).exp_m1();
        if !(mass > MIN_INTERVAL_MASS) {
            return Err(Error::DegenerateInterval { subject: i });
        }
        loglik += mass.ln();
        let w_right = 1.0 / gap.exp_m1();
        let w_left = 1.0 + w_right;
        diff_full[..k].copy_from_slice(&g_diff);
        for (j, &zj) in obs.z.iter().enumerate() {
            diff_full[k + j] = zj * gap;
        }
        for (s, dv) in score.iter_mut().zip(&diff_full) {
            *s += w_right * dv;
        }
        add_lambda_hessian(&mut hess, w_right, &g_diff, gap, &obs.z);
        let c = w_right * w_left;
        for r in 0..p {
            if diff_full[r] == 0.0 {
                continue;
            }
            for s in 0..p {
                hess[(r, s)] -= c * diff_full[r] * diff_full[s];
            }
        }
    }
    Ok(ObservedModelFunctions { loglik, score, hessian: hess })
}

/// Newton stops once `g' I^{-1} g` (twice the predicted gain) is below this.
const NEWTON_DECREMENT_TOL: f64 = 1e-10;
const LOG_HAZARD_FLOOR: f64 = -30.0;

/// Result of a direct maximization of the observed log-likelihood.
#[derive(Debug, Clone)]
pub struct ObservedFit {
    pub params: ModelParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Newton ascent on the observed log-likelihood in `(a, beta)` from `init`,
/// keeping the `fixed` flat components at their given values.
pub fn maximize_observed(
    data: &Dataset,
    grid: &CutGrid,
    init: &ModelParams,
    fixed: &[(usize, f64)],
    max_iter: usize,
) -> Result<ObservedFit> {
    let k = grid.n_pieces();
    let p = k + data.dz();
    let mut flat = init.to_flat();
    flat.truncate(p);
    let mut is_free = vec![true; p];
    for &(idx, value) in fixed {
        if idx >= p {
            return Err(Error::invalid(format!("fixed component {idx} is outside (a, beta)")));
        }
        is_free[idx] = false;
        flat[idx] = value;
    }
    let free: Vec<usize> = (0..p).filter(|&i| is_free[i]).collect();
    let template = ModelParams::new(vec![0.0; k], vec![0.0; data.dz()]);
    let mut theta = template.from_flat_like(&flat);
    let mut current = observed_score_hessian(&theta, data, grid)?;
    for iter in 1..=max_iter {
        let m = free.len();
        if m == 0 {
            return Ok(ObservedFit { params: theta, loglik: current.loglik, converged: true, iterations: iter - 1 });
        }
        let g = nalgebra::DVector::from_iterator(m, free.iter().map(|&i| current.score[i]));
        let info = DMatrix::from_fn(m, m, |r, c| -current.hessian[(free[r], free[c])]);
        let Some(chol) = info.cholesky() else {
            return Ok(ObservedFit { params: theta, loglik: current.loglik, converged: false, iterations: iter });
        };
        let step = chol.solve(&g);
        let decrement = g.dot(&step);
        if decrement < NEWTON_DECREMENT_TOL {
            return Ok(ObservedFit { params: theta, loglik: current.loglik, converged: true, iterations: iter - 1 });
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut cand = flat.clone();
            for (r, &i) in free.iter().enumerate() {
                cand[i] += t * step[r];
            }
            let cand_theta = template.from_flat_like(&cand);
            match observed_score_hessian(&cand_theta, data, grid) {
                Ok(f) if f.loglik.is_finite() && f.loglik >= current.loglik => {
                    accepted = Some((cand, cand_theta, f));
                    break;
                }
                Ok(_) | Err(Error::DegenerateInterval { .. }) | Err(Error::Divergence) => t *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((cand, cand_theta, f)) = accepted else {
            // no ascent left at machine precision
            let converged = decrement < 1e3 * NEWTON_DECREMENT_TOL;
            return Ok(ObservedFit { params: theta, loglik: current.loglik, converged, iterations: iter });
        };
        flat = cand;
        theta = cand_theta;
        current = f;
        if theta.log_hazard.iter().any(|&a| a < LOG_HAZARD_FLOOR) {
            // the supremum sits at a zero hazard; leave it to EM and pinning
            return Ok(ObservedFit { params: theta, loglik: current.loglik, converged: false, iterations: iter });
        }
    }
    Ok(ObservedFit { params: theta, loglik: current.loglik, converged: false, iterations: max_iter })
}
