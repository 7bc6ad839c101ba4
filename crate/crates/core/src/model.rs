//! Domain types of the piecewise-constant hazard Cox model and the functions
//! evaluating hazard, cumulative hazard, survival and density.
//!
//! The baseline hazard is `exp(a_k)` on the piece `(c_{k-1}, c_k]`, with
//! `c_0 = 0` and `c_K = +inf` implicit. Pieces are half-open on the left, so a
//! time equal to a cut belongs to the piece that ends there. Pieces are
//! indexed from 0 in code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered interior cuts `c_1 < ... < c_{K-1}` of the baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutGrid {
    interior: Vec<f64>,
}

impl CutGrid {
    pub fn new(interior: Vec<f64>) -> Result<Self> {
        for (i, &c) in interior.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!("cut {i} must be finite and positive, got {c}")));
            }
            if i > 0 && c <= interior[i - 1] {
                return Err(Error::invalid("cuts must be strictly increasing"));
            }
        }
        Ok(Self { interior })
    }

    /// A single piece covering `(0, inf)`.
    pub fn single() -> Self {
        Self { interior: Vec::new() }
    }

    /// Cuts `from, from + step, ...` up to and including `to` (within rounding).
    pub fn equally_spaced(from: f64, to: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(to >= from) {
            return Err(Error::invalid("equally spaced grid needs step > 0 and to >= from"));
        }
        let count = ((to - from) / step + 1e-9).floor() as usize + 1;
        Self::new((0..count).map(|i| from + step * i as f64).collect())
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Number of pieces `K`.
    pub fn n_pieces(&self) -> usize {
        self.interior.len() + 1
    }

    /// Lower end `c_{k-1}` of piece `k`.
    #[inline]
    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.interior[k - 1]
        }
    }

    /// Upper end `c_k` of piece `k`; infinite for the last piece.
    #[inline]
    pub fn upper(&self, k: usize) -> f64 {
        self.interior.get(k).copied().unwrap_or(f64::INFINITY)
    }

    #[inline]
    pub fn width(&self, k: usize) -> f64 {
        self.upper(k) - self.lower(k)
    }

    /// Index of the piece `(c_{k-1}, c_k]` containing `t`. `t = 0` maps to the
    /// first piece.
    #[inline]
    pub fn piece_index(&self, t: f64) -> usize {
        self.interior.partition_point(|&c| c < t)
    }

    /// Time spent in piece `k` before `t`: `max(0, min(t, c_k) - c_{k-1})`.
    #[inline]
    pub fn exposure(&self, t: f64, k: usize) -> f64 {
        let lo = self.lower(k);
        if t <= lo {
            0.0
        } else {
            t.min(self.upper(k)) - lo
        }
    }

    /// Sub-grid keeping the interior cuts at the given positions.
    pub fn subgrid(&self, keep: &[usize]) -> Self {
        Self {
            interior: keep.iter().map(|&i| self.interior[i]).collect(),
        }
    }
}

/// Censoring class, a pure function of `(left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensorClass {
    LeftCensored,
    IntervalCensored,
    RightCensored,
    Exact,
}

impl CensorClass {
    pub fn of(left: f64, right: f64) -> Self {
        if left == right {
            CensorClass::Exact
        } else if right.is_infinite() {
            CensorClass::RightCensored
        } else if left == 0.0 {
            CensorClass::LeftCensored
        } else {
            CensorClass::IntervalCensored
        }
    }
}

/// One subject: the event time lies in `[left, right]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub left: f64,
    pub right: f64,
    /// Hazard covariates `Z`.
    pub z: Vec<f64>,
    /// Cure covariates `X`, including the leading intercept. Empty when no
    /// logistic cure model is used.
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(left: f64, right: f64, z: Vec<f64>) -> Result<Self> {
        Self::with_cure_covariates(left, right, z, Vec::new())
    }

    pub fn with_cure_covariates(left: f64, right: f64, z: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if !(left.is_finite() && left >= 0.0) {
            return Err(Error::invalid(format!("left end must be finite and >= 0, got {left}")));
        }
        if right.is_nan() || right < left {
            return Err(Error::invalid(format!("right end {right} is below left end {left}")));
        }
        if left == right && left == 0.0 {
            return Err(Error::invalid("an exact event time must be positive"));
        }
        if z.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        Ok(Self { left, right, z, x })
    }

    pub fn exact(t: f64, z: Vec<f64>) -> Result<Self> {
        Self::new(t, t, z)
    }

    pub fn class(&self) -> CensorClass {
        CensorClass::of(self.left, self.right)
    }

    /// Event indicator: 0 for right-censored subjects, 1 otherwise.
    pub fn delta(&self) -> bool {
        self.class() != CensorClass::RightCensored
    }

    pub fn is_exact(&self) -> bool {
        self.left == self.right
    }
}

/// A validated collection of observations sharing covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    obs: Vec<Observation>,
    dz: usize,
    dx: usize,
}

impl Dataset {
    pub fn new(obs: Vec<Observation>) -> Result<Self> {
        let first = obs.first().ok_or_else(|| Error::invalid("dataset is empty"))?;
        let (dz, dx) = (first.z.len(), first.x.len());
        for o in &obs {
            if o.z.len() != dz {
                return Err(Error::Dimension { what: "hazard covariates", expected: dz, got: o.z.len() });
            }
            if o.x.len() != dx {
                return Err(Error::Dimension { what: "cure covariates", expected: dx, got: o.x.len() });
            }
        }
        Ok(Self { obs, dz, dx })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dz(&self) -> usize {
        self.dz
    }

    pub fn dx(&self) -> usize {
        self.dx
    }

    /// Subjects picked by index, with repetition (bootstrap resampling).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.obs[i].clone()).collect())
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for o in &self.obs {
            let slot = match o.class() {
                CensorClass::LeftCensored => 0,
                CensorClass::IntervalCensored => 1,
                CensorClass::RightCensored => 2,
                CensorClass::Exact => 3,
            };
            counts[slot] += 1;
        }
        counts
    }
}

/// Parameters of the susceptible probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CureParams {
    /// Everybody is susceptible (`p = 1`).
    None,
    /// A common susceptible probability `p` in `(0, 1]`.
    Scalar(f64),
    /// Logistic link `p(x) = 1 / (1 + exp(-gamma . x))`.
    Logistic(Vec<f64>),
}

impl CureParams {
    pub fn n_params(&self) -> usize {
        match self {
            CureParams::None => 0,
            CureParams::Scalar(_) => 1,
            CureParams::Logistic(g) => g.len(),
        }
    }
}

/// Full parameter vector `(a_1..a_K, beta, cure part)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub log_hazard: Vec<f64>,
    pub beta: Vec<f64>,
    pub cure: CureParams,
}

impl ModelParams {
    pub fn new(log_hazard: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { log_hazard, beta, cure: CureParams::None }
    }

    pub fn with_cure(mut self, cure: CureParams) -> Self {
        self.cure = cure;
        self
    }

    pub fn n_pieces(&self) -> usize {
        self.log_hazard.len()
    }

    /// Number of free parameters.
    pub fn n_params(&self) -> usize {
        self.log_hazard.len() + self.beta.len() + self.cure.n_params()
    }

    pub fn check(&self, grid: &CutGrid) -> Result<()> {
        if self.log_hazard.len() != grid.n_pieces() {
            return Err(Error::Dimension {
                what: "log hazard vs grid pieces",
                expected: grid.n_pieces(),
                got: self.log_hazard.len(),
            });
        }
        if let CureParams::Scalar(p) = self.cure {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("susceptible probability {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// `beta . z`.
    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.beta.len() {
            return Err(Error::Dimension { what: "hazard covariates", expected: self.beta.len(), got: z.len() });
        }
        Ok(dot(&self.beta, z))
    }

    /// Probability of being susceptible for cure covariates `x`.
    pub fn susceptible_prob(&self, x: &[f64]) -> Result<f64> {
        match &self.cure {
            CureParams::None => Ok(1.0),
            CureParams::Scalar(p) => Ok(*p),
            CureParams::Logistic(g) => {
                if g.len() != x.len() {
                    return Err(Error::Dimension { what: "cure covariates", expected: g.len(), got: x.len() });
                }
                Ok(logistic(dot(g, x)))
            }
        }
    }

    /// Flat view `(a, beta, cure)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.log_hazard.clone();
        v.extend_from_slice(&self.beta);
        match &self.cure {
            CureParams::None => {}
            CureParams::Scalar(p) => v.push(*p),
            CureParams::Logistic(g) => v.extend_from_slice(g),
        }
        v
    }

    /// Inverse of [`ModelParams::to_flat`] using `self` as the shape template.
    pub fn from_flat_like(&self, flat: &[f64]) -> Self {
        let k = self.log_hazard.len();
        let d = self.beta.len();
        let cure = match &self.cure {
            CureParams::None => CureParams::None,
            CureParams::Scalar(_) => CureParams::Scalar(flat[k + d]),
            CureParams::Logistic(g) => CureParams::Logistic(flat[k + d..k + d + g.len()].to_vec()),
        };
        Self { log_hazard: flat[..k].to_vec(), beta: flat[k..k + d].to_vec(), cure }
    }
}

/// Which survivor function to report when a cure fraction is modelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurvivalMode<'a> {
    /// Survival of the susceptible subpopulation, `exp(-Lambda(t|z))`.
    Susceptible,
    /// Population survival `(1 - p(x)) + p(x) exp(-Lambda(t|z))`.
    Marginal { x: &'a [f64] },
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `exp(a_k + eta)`, rejecting overflow.
#[inline]
pub(crate) fn rate(log_rate: f64) -> Result<f64> {
    let r = log_rate.exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Divergence)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

/// Baseline cumulative hazard `sum_k exp(a_k) * exposure_k(t)`.
pub fn baseline_cumulative_hazard(t: f64, log_hazard: &[f64], grid: &CutGrid) -> Result<f64> {
    check_time(t)?;
    let last = grid.piece_index(t).min(grid.n_pieces() - 1);
    let mut total = 0.0;
    for (k, &a) in log_hazard.iter().enumerate().take(last + 1) {
        let u = grid.exposure(t, k);
        if u > 0.0 {
            total += rate(a)? * u;
        }
    }
    Ok(total)
}

/// `Lambda(t | z) = exp(beta z) * Lambda_0(t)`.
pub fn cumulative_hazard(t: f64, z: &[f64], params: &ModelParams, grid: &CutGrid) -> Result<f64> {
    params.check(grid)?;
    let eta = params.linear_predictor(z)?;
    let base = baseline_cumulative_hazard(t, &params.log_hazard, grid)?;
    if base == 0.0 {
        return Ok(0.0);
    }
    Ok(rate(eta)? * base)
}

/// Hazard `lambda(t | z)` at `t > 0`.
pub fn hazard(t: f64, z: &[f64], params: &ModelParams, grid: &CutGrid) -> Result<f64> {
    params.check(grid)?;
    check_time(t)?;
    let eta = params.linear_predictor(z)?;
    let k = grid.piece_index(t);
    rate(params.log_hazard[k] + eta)
}

/// Survivor function. With [`SurvivalMode::Marginal`] the cure mixture
/// `(1 - p) + p S(t)` is returned.
pub fn survival(
    t: f64,
    z: &[f64],
    params: &ModelParams,
    grid: &CutGrid,
    mode: SurvivalMode<'_>,
) -> Result<f64> {
    let s = (-cumulative_hazard(t, z, params, grid)?).exp();
    match mode {
        SurvivalMode::Susceptible => Ok(s),
        SurvivalMode::Marginal { x } => {
            let p = params.susceptible_prob(x)?;
            Ok((1.0 - p) + p * s)
        }
    }
}

/// Density of the susceptible event time, `lambda(t|z) S(t|z)`.
pub fn density(t: f64, z: &[f64], params: &ModelParams, grid: &CutGrid) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("density needs a finite positive time, got {t}")));
    }
    let h = hazard(t, z, params, grid)?;
    let s = (-cumulative_hazard(t, z, params, grid)?).exp();
    Ok(h * s)
}
