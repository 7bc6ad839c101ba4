//! Conditional expectations of the complete-data log-likelihood.
//!
//! For a censored subject the latent event time `T` lies in `(L, R)`. The
//! statistic `A[i,k]` is the conditional probability that `T` falls in piece
//! `k` and `B[i,k]` the conditional expectation of `(T - c_{k-1}) 1{T in k}`.
//! Both have closed forms; everything is computed relative to `S(L)` so late
//! intervals do not underflow.
//!
//! Exact subjects contribute occurrence `O[i,k]` and exposure `R[i,k]`; in the
//! cure model every subject carries the posterior susceptibility weight `pi`.

use crate::error::{Error, Result};
use crate::model::{dot, rate, CureParams, CutGrid, Dataset, ModelParams, Observation};

/// Smallest conditional interval mass (relative to `S(L)`) accepted before a
/// subject is declared degenerate.
pub const MIN_INTERVAL_MASS: f64 = 1e-300;

/// `(1 - e^{-u} - u e^{-u}) / u`, accurate for small `u`.
#[inline]
pub(crate) fn phi(u: f64) -> f64 {
    if u < 0.5 {
        // sum_{n>=2} (-1)^n (n-1) u^{n-1} / n!
        let mut term = 1.0; // u^{n-1}/n! at n = 1
        let mut total = 0.0;
        for n in 2..=24 {
            term *= u / n as f64;
            let s = (n - 1) as f64 * term;
            if n % 2 == 0 {
                total += s;
            } else {
                total -= s;
            }
        }
        total
    } else {
        (-(-u).exp_m1() - u * (-u).exp()) / u
    }
}

/// Summary of one censored subject's interval under the current parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IntervalMass {
    /// `Lambda(L | z)`.
    pub cum_left: f64,
    /// `1 - S(R)/S(L)`.
    pub rel_mass: f64,
}

/// Fills the A and B rows of a non-exact subject with linear predictor `eta`.
pub(crate) fn fill_interval_row(
    left: f64,
    right: f64,
    eta: f64,
    log_hazard: &[f64],
    grid: &CutGrid,
    a_row: &mut [f64],
    b_row: &mut [f64],
) -> Result<IntervalMass> {
    a_row.fill(0.0);
    b_row.fill(0.0);
    let interior = grid.interior();
    let first = interior.partition_point(|&c| c <= left);
    let last = if right.is_infinite() { grid.n_pieces() - 1 } else { grid.piece_index(right) };

    let mut cum_left = 0.0;
    for (k, &a) in log_hazard.iter().enumerate().take(first) {
        cum_left += rate(a + eta)? * grid.width(k);
    }
    let h_first = rate(log_hazard[first] + eta)?;
    cum_left += h_first * (left - grid.lower(first));

    // x = Lambda(lo) - Lambda(L) while walking the pieces of (L, R)
    let mut x = 0.0f64;
    for k in first..=last {
        let lower = grid.lower(k);
        let lo = lower.max(left);
        let hi = grid.upper(k).min(right);
        if hi <= lo {
            continue;
        }
        let h = rate(log_hazard[k] + eta)?;
        let surv_lo = (-x).exp();
        if hi.is_infinite() {
            a_row[k] = surv_lo;
            b_row[k] = surv_lo * (1.0 / h + (lo - lower));
            x = f64::INFINITY;
        } else {
            let span = hi - lo;
            let u = h * span;
            let in_piece = -(-u).exp_m1();
            a_row[k] = surv_lo * in_piece;
            b_row[k] = surv_lo * (span * phi(u) + (lo - lower) * in_piece);
            x += u;
        }
    }
    let rel_mass = -(-x).exp_m1();
    if !(rel_mass > MIN_INTERVAL_MASS) || !rel_mass.is_finite() || !cum_left.is_finite() {
        return Err(Error::DegenerateInterval { subject: 0 });
    }
    for k in first..=last {
        a_row[k] /= rel_mass;
        b_row[k] /= rel_mass;
    }
    Ok(IntervalMass { cum_left, rel_mass })
}

/// A and B rows of a left-, interval- or right-censored subject.
pub fn interval_stats(
    obs: &Observation,
    theta_old: &ModelParams,
    grid: &CutGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    theta_old.check(grid)?;
    if obs.is_exact() {
        return Err(Error::invalid("interval statistics need a censored subject"));
    }
    let eta = theta_old.linear_predictor(&obs.z)?;
    let k = grid.n_pieces();
    let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
    fill_interval_row(obs.left, obs.right, eta, &theta_old.log_hazard, grid, &mut a, &mut b)?;
    Ok((a, b))
}

pub(crate) fn fill_exact_row(t: f64, grid: &CutGrid, o_row: &mut [f64], r_row: &mut [f64]) {
    o_row.fill(0.0);
    let kt = grid.piece_index(t);
    o_row[kt] = 1.0;
    for (k, r) in r_row.iter_mut().enumerate() {
        *r = grid.exposure(t, k);
    }
}

/// Occurrence and exposure rows of an exact subject.
pub fn exact_stats(obs: &Observation, grid: &CutGrid) -> Result<(Vec<f64>, Vec<f64>)> {
    if !obs.is_exact() {
        return Err(Error::invalid("exact statistics need an exact observation"));
    }
    if !(obs.left > 0.0) {
        return Err(Error::invalid("exact event time must be positive"));
    }
    let k = grid.n_pieces();
    let (mut o, mut r) = (vec![0.0; k], vec![0.0; k]);
    fill_exact_row(obs.left, grid, &mut o, &mut r);
    Ok((o, r))
}

/// Posterior probability of being susceptible given `cum_left = Lambda(L|z)`.
#[inline]
pub(crate) fn posterior_susceptible(delta: bool, p: f64, cum_left: f64) -> f64 {
    if delta || p >= 1.0 {
        return 1.0;
    }
    let ps = p * (-cum_left).exp();
    ps / ((1.0 - p) + ps)
}

/// `pi_i = E[Y_i | data, theta_old]`.
pub fn cure_weight(obs: &Observation, theta_old: &ModelParams, grid: &CutGrid) -> Result<f64> {
    theta_old.check(grid)?;
    let p = theta_old.susceptible_prob(&obs.x)?;
    if obs.delta() {
        return Ok(1.0);
    }
    let eta = theta_old.linear_predictor(&obs.z)?;
    let cum = crate::model::baseline_cumulative_hazard(obs.left, &theta_old.log_hazard, grid)?;
    let cum = if cum == 0.0 { 0.0 } else { rate(eta)? * cum };
    Ok(posterior_susceptible(false, p, cum))
}

/// All E-step statistics for one dataset at `theta_old`, plus the observed
/// log-likelihood at `theta_old`, which falls out of the same pass.
#[derive(Debug, Clone)]
pub struct EStepBundle {
    n: usize,
    k: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    o: Vec<f64>,
    r: Vec<f64>,
    pi: Vec<f64>,
    /// Occurrences: A for censored rows, O for exact rows.
    events: Vec<f64>,
    /// Expected exposure per piece: `w_k sum_{l>k} A_l + B_k`, or R.
    exposure: Vec<f64>,
    theta_old: ModelParams,
    obs_loglik: f64,
}

impl EStepBundle {
    pub fn build(data: &Dataset, theta_old: &ModelParams, grid: &CutGrid) -> Result<Self> {
        theta_old.check(grid)?;
        if theta_old.beta.len() != data.dz() {
            return Err(Error::Dimension {
                what: "beta vs hazard covariates",
                expected: data.dz(),
                got: theta_old.beta.len(),
            });
        }
        let n = data.len();
        let k = grid.n_pieces();
        let mut bundle = Self {
            n,
            k,
            a: vec![0.0; n * k],
            b: vec![0.0; n * k],
            o: vec![0.0; n * k],
            r: vec![0.0; n * k],
            pi: vec![1.0; n],
            events: vec![0.0; n * k],
            exposure: vec![0.0; n * k],
            theta_old: theta_old.clone(),
            obs_loglik: 0.0,
        };
        let mut loglik = 0.0;
        for (i, obs) in data.observations().iter().enumerate() {
            let rows = i * k..(i + 1) * k;
            let eta = dot(&theta_old.beta, &obs.z);
            let p = theta_old.susceptible_prob(&obs.x)?;
            if obs.is_exact() {
                fill_exact_row(obs.left, grid, &mut bundle.o[rows.clone()], &mut bundle.r[rows.clone()]);
                bundle.events[rows.clone()].copy_from_slice(&bundle.o[rows.clone()]);
                bundle.exposure[rows.clone()].copy_from_slice(&bundle.r[rows.clone()]);
                let kt = grid.piece_index(obs.left);
                let mut cum = 0.0;
                for kk in 0..=kt {
                    cum += rate(theta_old.log_hazard[kk] + eta)? * bundle.r[i * k + kk];
                }
                loglik += p.ln() + theta_old.log_hazard[kt] + eta - cum;
            } else {
                let mass = fill_interval_row(
                    obs.left,
                    obs.right,
                    eta,
                    &theta_old.log_hazard,
                    grid,
                    &mut bundle.a[rows.clone()],
                    &mut bundle.b[rows.clone()],
                )
                .map_err(|e| match e {
                    Error::DegenerateInterval { .. } => Error::DegenerateInterval { subject: i },
                    other => other,
                })?;
                let a_row = &bundle.a[rows.clone()];
                let b_row = &bundle.b[rows.clone()];
                let mut tail = 0.0;
                for kk in (0..k).rev() {
                    let e = if kk + 1 < k { grid.width(kk) * tail } else { 0.0 };
                    bundle.exposure[i * k + kk] = e + b_row[kk];
                    tail += a_row[kk];
                }
                bundle.events[rows.clone()].copy_from_slice(a_row);
                if obs.delta() {
                    loglik += p.ln() - mass.cum_left + mass.rel_mass.ln();
                } else {
                    let s_left = (-mass.cum_left).exp();
                    loglik += if p >= 1.0 { -mass.cum_left } else { ((1.0 - p) + p * s_left).ln() };
                    bundle.pi[i] = posterior_susceptible(false, p, mass.cum_left);
                }
            }
        }
        bundle.obs_loglik = loglik;
        Ok(bundle)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_pieces(&self) -> usize {
        self.k
    }

    pub fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.k..(i + 1) * self.k]
    }

    pub fn b_row(&self, i: usize) -> &[f64] {
        &self.b[i * self.k..(i + 1) * self.k]
    }

    pub fn o_row(&self, i: usize) -> &[f64] {
        &self.o[i * self.k..(i + 1) * self.k]
    }

    pub fn r_row(&self, i: usize) -> &[f64] {
        &self.r[i * self.k..(i + 1) * self.k]
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn theta_old(&self) -> &ModelParams {
        &self.theta_old
    }

    /// Observed-data log-likelihood at `theta_old`.
    pub fn obs_loglik(&self) -> f64 {
        self.obs_loglik
    }

    #[inline]
    pub(crate) fn events_row(&self, i: usize) -> &[f64] {
        &self.events[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    pub(crate) fn exposure_row(&self, i: usize) -> &[f64] {
        &self.exposure[i * self.k..(i + 1) * self.k]
    }

    /// Pi-weighted occurrence totals per piece (`A-bar + O-bar`).
    pub fn event_totals(&self) -> Vec<f64> {
        self.weighted_column_sums(&self.events)
    }

    /// Pi-weighted expected exposure per piece
    /// (`w_k sum_{l>k} A-bar_l + B-bar_k + R-bar_k`).
    pub fn exposure_totals(&self) -> Vec<f64> {
        self.weighted_column_sums(&self.exposure)
    }

    fn weighted_column_sums(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for i in 0..self.n {
            let w = self.pi[i];
            for (o, v) in out.iter_mut().zip(&m[i * self.k..(i + 1) * self.k]) {
                *o += w * v;
            }
        }
        out
    }
}

/// Bernoulli part of Q for the susceptibility indicators.
pub(crate) fn cure_q(cure: &CureParams, data: &Dataset, pi: &[f64]) -> f64 {
    let term = |w: f64, p: f64| {
        let mut q = 0.0;
        if w > 0.0 {
            q += w * p.ln();
        }
        if w < 1.0 {
            q += (1.0 - w) * (1.0 - p).ln();
        }
        q
    };
    match cure {
        CureParams::None => 0.0,
        CureParams::Scalar(p) => pi.iter().map(|&w| term(w, *p)).sum(),
        CureParams::Logistic(g) => data
            .observations()
            .iter()
            .zip(pi)
            .map(|(o, &w)| term(w, crate::model::logistic(dot(g, &o.x))))
            .sum(),
    }
}

/// `Q(theta | theta_old)`: cure Bernoulli part, pi-weighted censored part and
/// exact part.
pub fn q_value(theta: &ModelParams, bundle: &EStepBundle, data: &Dataset, grid: &CutGrid) -> Result<f64> {
    theta.check(grid)?;
    let hazards = theta.log_hazard.iter().map(|&a| a.exp()).collect::<Vec<_>>();
    let mut q = 0.0;
    for (i, obs) in data.observations().iter().enumerate() {
        let eta = theta.linear_predictor(&obs.z)?;
        let ev = bundle.events_row(i);
        let ex = bundle.exposure_row(i);
        let mut occ = 0.0;
        let mut cum = 0.0;
        for kk in 0..bundle.k {
            occ += ev[kk] * (theta.log_hazard[kk] + eta);
            cum += hazards[kk] * ex[kk];
        }
        let contrib = occ - rate(eta)? * cum;
        q += bundle.pi[i] * contrib;
    }
    Ok(q + cure_q(&theta.cure, data, &bundle.pi))
}
