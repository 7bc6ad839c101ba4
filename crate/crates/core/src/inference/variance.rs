use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::observed::observed_score_hessian;
use crate::error::{Error, Result};
use crate::mstep::FitResult;
use crate::model::{CutGrid, Dataset};

/// Plug-in variances from the inverse observed information, cuts held fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub grid: CutGrid,
    /// Covariance of `(a, beta)`; rows and columns of pinned pieces are zero.
    pub covariance: Vec<Vec<f64>>,
    pub var_beta: Vec<Vec<f64>>,
    pub var_log_hazard: Vec<f64>,
    /// Delta-method variance of `exp(a_k)`.
    pub var_hazard: Vec<f64>,
}

impl AsymptoticVariance {
    /// Variance of the baseline hazard estimate at time `t`.
    pub fn var_hazard_at(&self, t: f64) -> f64 {
        self.var_hazard[self.grid.piece_index(t)]
    }

    pub fn se_beta(&self) -> Vec<f64> {
        (0..self.var_beta.len()).map(|j| self.var_beta[j][j].sqrt()).collect()
    }
}

pub fn asymptotic_variance(fit: &FitResult, data: &Dataset) -> Result<AsymptoticVariance> {
    let k = fit.grid.n_pieces();
    let d = data.dz();
    let p = k + d;
    let obs = observed_score_hessian(&fit.params, data, &fit.grid)?;
    let free: Vec<usize> = (0..p).filter(|i| !fit.pinned.contains(i)).collect();
    let m = free.len();
    let info = DMatrix::from_fn(m, m, |r, c| -obs.hessian[(free[r], free[c])]);
    let inverse = match info.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let n_a = free.iter().filter(|&&i| i < k).count();
            let beta_block = info.view((n_a, n_a), (m - n_a, m - n_a)).into_owned();
            let what = if d > 0 && beta_block.cholesky().is_none() {
                "regression coefficients block"
            } else if info.view((0, 0), (n_a, n_a)).into_owned().cholesky().is_none() {
                "baseline log-hazard block"
            } else {
                "full information matrix"
            };
            return Err(Error::SingularHessian(what.into()));
        }
    };
    let mut cov = vec![vec![0.0; p]; p];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            cov[i][j] = inverse[(r, c)];
        }
    }
    let var_beta = (0..d).map(|j| (0..d).map(|l| cov[k + j][k + l]).collect()).collect();
    let var_log_hazard: Vec<f64> = (0..k).map(|kk| cov[kk][kk]).collect();
    let var_hazard = var_log_hazard
        .iter()
        .zip(&fit.params.log_hazard)
        .map(|(v, a)| (2.0 * a).exp() * v)
        .collect();
    Ok(AsymptoticVariance { grid: fit.grid.clone(), covariance: cov, var_beta, var_log_hazard, var_hazard })
}

/// Wald interval `estimate -/+ z_{1-alpha/2} se`.
pub fn wald_interval(estimate: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    let q = crate::special::chi2_quantile(1.0 - alpha, 1.0)?.sqrt();
    let half = q * variance.sqrt();
    Ok((estimate - half, estimate + half))
}
