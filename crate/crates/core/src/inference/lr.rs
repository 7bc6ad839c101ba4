use serde::{Deserialize, Serialize};

use super::observed::maximize_observed;
use crate::error::{Error, Result};
use crate::mstep::{em_fit_with, FitConfig, FitOptions, FitResult};
use crate::model::{CureParams, Dataset, ModelParams};
use crate::special::{chi2_quantile, chi2_sf};

const NEWTON_ITERS: usize = 100;

/// Maximized log-likelihood with some flat `(a, beta)` components fixed.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub params: ModelParams,
    pub loglik: f64,
    pub converged: bool,
}

/// Re-maximizes every free component of `fit`'s model from `start` with the
/// `fixed` components held. Pinned pieces of `fit` stay pinned.
pub fn profile_fit(
    data: &Dataset,
    fit: &FitResult,
    start: &ModelParams,
    fixed: &[(usize, f64)],
    config: &FitConfig,
) -> Result<ProfilePoint> {
    let mut all_fixed: Vec<(usize, f64)> = fixed.to_vec();
    for &k in &fit.pinned {
        if !fixed.iter().any(|&(i, _)| i == k) {
            all_fixed.push((k, fit.params.log_hazard[k]));
        }
    }
    if matches!(start.cure, CureParams::None) {
        if let Ok(direct) = maximize_observed(data, &fit.grid, start, &all_fixed, NEWTON_ITERS) {
            if direct.converged {
                return Ok(ProfilePoint { params: direct.params, loglik: direct.loglik, converged: true });
            }
        }
    }
    let options = FitOptions { init: Some(start.clone()), fixed: all_fixed.clone(), penalty: None };
    let em = em_fit_with(data, &fit.grid, config, &options)?;
    if matches!(start.cure, CureParams::None) {
        if let Ok(polished) = maximize_observed(data, &fit.grid, &em.params, &all_fixed, NEWTON_ITERS) {
            if polished.loglik >= em.obs_loglik {
                return Ok(ProfilePoint { params: polished.params, loglik: polished.loglik, converged: polished.converged });
            }
        }
    }
    Ok(ProfilePoint { params: em.params, loglik: em.obs_loglik, converged: em.converged })
}

/// Unrestricted maximum refined by Newton steps on the observed likelihood.
pub fn polish(data: &Dataset, fit: &FitResult, config: &FitConfig) -> Result<ProfilePoint> {
    let point = profile_fit(data, fit, &fit.params, &[], config)?;
    if point.loglik >= fit.obs_loglik {
        Ok(point)
    } else {
        Ok(ProfilePoint { params: fit.params.clone(), loglik: fit.obs_loglik, converged: fit.converged })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub full_loglik: f64,
    pub restricted_loglik: f64,
    /// Whether the restricted maximization converged.
    pub converged: bool,
}

/// Likelihood-ratio test of `theta_j = value` for every `(j, value)` in
/// `restriction` (flat `(a, beta)` indices).
pub fn lr_test(data: &Dataset, full: &FitResult, restriction: &[(usize, f64)], config: &FitConfig) -> Result<LrTest> {
    if restriction.is_empty() {
        return Err(Error::invalid("empty restriction"));
    }
    let best = polish(data, full, config)?;
    let mut start = best.params.clone();
    set_flat(&mut start, restriction);
    let restricted = profile_fit(data, full, &start, restriction, config)?;
    let statistic = (2.0 * (best.loglik - restricted.loglik)).max(0.0);
    let df = restriction.len();
    Ok(LrTest {
        statistic,
        df,
        p_value: chi2_sf(statistic, df as f64),
        full_loglik: best.loglik,
        restricted_loglik: restricted.loglik,
        converged: restricted.converged,
    })
}

fn set_flat(theta: &mut ModelParams, values: &[(usize, f64)]) {
    let k = theta.log_hazard.len();
    for &(i, v) in values {
        if i < k {
            theta.log_hazard[i] = v;
        } else {
            theta.beta[i - k] = v;
        }
    }
}

/// Confidence interval from inverting the likelihood-ratio test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// False when no sign change was found below the estimate; `lower` is
    /// then `-inf`.
    pub lower_found: bool,
    pub upper_found: bool,
}

impl LrInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self { estimate: f(self.estimate), lower: f(self.lower), upper: f(self.upper), ..self }
    }
}

pub const INITIAL_BRACKET: f64 = 2.0;
pub const BRACKET_DOUBLINGS: usize = 5;

/// Solves `profile(theta) + q / 2 - profile(estimate) = 0` on both sides of
/// `estimate`, where `profile` returns the profile log-likelihood. Brackets
/// start at width 2 and double at most five times; bisection stops when the
/// residual is below 1e-8 or the bracket below 1e-10.
pub fn profile_interval<F>(estimate: f64, q: f64, mut profile: F) -> Result<LrInterval>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(q >= 0.0) {
        return Err(Error::invalid("negative chi-squared level"));
    }
    let top = profile(estimate)?;
    if q == 0.0 {
        return Ok(LrInterval { estimate, lower: estimate, upper: estimate, lower_found: true, upper_found: true });
    }
    let mut residual = |theta: f64| -> Result<f64> { Ok(profile(theta)? + 0.5 * q - top) };
    let mut bound = |sign: f64| -> Result<Option<f64>> {
        let mut inner = 0.0;
        let mut c = INITIAL_BRACKET;
        for _ in 0..=BRACKET_DOUBLINGS {
            let f = residual(estimate + sign * c)?;
            if f.abs() < 1e-8 {
                return Ok(Some(estimate + sign * c));
            }
            if f < 0.0 {
                let (mut lo, mut hi) = (inner, c);
                loop {
                    let mid = 0.5 * (lo + hi);
                    let fm = residual(estimate + sign * mid)?;
                    if fm.abs() < 1e-8 || hi - lo < 1e-10 {
                        return Ok(Some(estimate + sign * mid));
                    }
                    if fm > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            inner = c;
            c *= 2.0;
        }
        Ok(None)
    };
    let lower = bound(-1.0)?;
    let upper = bound(1.0)?;
    Ok(LrInterval {
        estimate,
        lower: lower.unwrap_or(f64::NEG_INFINITY),
        upper: upper.unwrap_or(f64::INFINITY),
        lower_found: lower.is_some(),
        upper_found: upper.is_some(),
    })
}

/// Likelihood-ratio interval at level `1 - alpha` for flat component
/// `component` of `(a, beta)`, other components profiled out.
pub fn lr_confint(
    data: &Dataset,
    full: &FitResult,
    component: usize,
    alpha: f64,
    config: &FitConfig,
) -> Result<LrInterval> {
    let k = full.grid.n_pieces();
    if component >= k + data.dz() {
        return Err(Error::invalid(format!("component {component} is outside (a, beta)")));
    }
    if full.pinned.contains(&component) {
        return Err(Error::invalid(format!("piece {component} is pinned at the floor")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let q = chi2_quantile(1.0 - alpha, 1.0)?;
    let best = polish(data, full, config)?;
    let estimate = best.params.to_flat()[component];
    // warm start from the closest point evaluated so far
    let mut visited: Vec<(f64, ModelParams)> = vec![(estimate, best.params.clone())];
    let top = best.loglik;
    let profile = |value: f64| -> Result<f64> {
        if value == estimate {
            return Ok(top);
        }
        let nearest = visited
            .iter()
            .min_by(|a, b| (a.0 - value).abs().total_cmp(&(b.0 - value).abs()))
            .map(|(_, p)| p.clone())
            .expect("nonempty");
        let mut start = nearest;
        set_flat(&mut start, &[(component, value)]);
        match profile_fit(data, full, &start, &[(component, value)], config) {
            Ok(point) => {
                let ll = point.loglik.min(top);
                visited.push((value, point.params));
                Ok(ll)
            }
            // the restriction leaves some interval with zero probability
            Err(Error::DegenerateInterval { .. } | Error::Divergence) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    profile_interval(estimate, q, profile)
}
