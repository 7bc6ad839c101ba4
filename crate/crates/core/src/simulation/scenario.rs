use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{logistic, CutGrid, Dataset, Observation};
use crate::rng::stream_rng;

pub const TRUE_BETA: [f64; 2] = [std::f64::consts::LN_2, -0.223_143_551_314_209_76];
pub const M1_CUTS: [f64; 3] = [20.0, 40.0, 50.0];
pub const M1_HAZARDS: [f64; 4] = [0.005, 0.01, 0.02, 0.04];
pub const WEIBULL_SHAPE: f64 = 8.0;
pub const WEIBULL_SCALE: f64 = 50.0;
pub const EXACT_SHARE: f64 = 0.18;

/// True or estimated baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Piecewise { grid: CutGrid, log_hazard: Vec<f64> },
    /// `Lambda_0(t) = (t / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Baseline::Piecewise { grid, log_hazard } => (0..grid.n_pieces())
                .map(|k| log_hazard[k].exp() * grid.exposure(t, k))
                .sum(),
            Baseline::Weibull { shape, scale } => (t / scale).powf(*shape),
        }
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match self {
            Baseline::Piecewise { grid, log_hazard } => log_hazard[grid.piece_index(t)].exp(),
            Baseline::Weibull { shape, scale } => shape / scale * (t / scale).powf(shape - 1.0),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative(t)).exp()
    }

    /// Time at which the cumulative hazard reaches `h`.
    pub fn inverse_cumulative(&self, h: f64) -> f64 {
        match self {
            Baseline::Piecewise { grid, log_hazard } => {
                let mut remaining = h;
                for k in 0..grid.n_pieces() {
                    let rate = log_hazard[k].exp();
                    let width = grid.width(k);
                    if remaining <= rate * width {
                        return grid.lower(k) + remaining / rate;
                    }
                    remaining -= rate * width;
                }
                unreachable!("last piece is unbounded")
            }
            Baseline::Weibull { shape, scale } => scale * h.powf(1.0 / shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineModel {
    /// Piecewise-constant hazard with three cuts.
    M1,
    /// Weibull hazard, shape 8 and scale 50.
    M2,
}

impl BaselineModel {
    pub fn baseline(self) -> Baseline {
        match self {
            BaselineModel::M1 => Baseline::Piecewise {
                grid: CutGrid::new(M1_CUTS.to_vec()).expect("valid cuts"),
                log_hazard: M1_HAZARDS.iter().map(|h| h.ln()).collect(),
            },
            BaselineModel::M2 => Baseline::Weibull { shape: WEIBULL_SHAPE, scale: WEIBULL_SCALE },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scenario {
    /// Left-, interval- and right-censored data.
    S1,
    /// As S1 with 18% exact observations.
    S2,
    /// Logistic cure fraction, `gamma = (ln 2.35, ln 2)`, exact share 18%.
    S3,
    /// Logistic cure fraction, `gamma = (ln 0.8, ln 2)`, exact share 18%.
    S4,
    /// As S1 with a constant susceptible probability `p`.
    ScalarCure { p: f64 },
}

impl Scenario {
    pub fn gamma(self) -> Option<[f64; 2]> {
        match self {
            Scenario::S3 => Some([2.35f64.ln(), 2f64.ln()]),
            Scenario::S4 => Some([0.8f64.ln(), 2f64.ln()]),
            _ => None,
        }
    }

    fn exact_share(self) -> f64 {
        match self {
            Scenario::S1 | Scenario::ScalarCure { .. } => 0.0,
            Scenario::S2 | Scenario::S3 | Scenario::S4 => EXACT_SHARE,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            other => Err(Error::invalid(format!("unknown scenario {other}"))),
        }
    }
}

impl BaselineModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(BaselineModel::M1),
            "M2" => Ok(BaselineModel::M2),
            other => Err(Error::invalid(format!("unknown model {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model: BaselineModel,
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(model: BaselineModel, scenario: Scenario, n: usize, seed: u64) -> Self {
        Self { model, scenario, n, seed }
    }
}

/// One subject before censoring, kept for checks on the generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSubject {
    pub event_time: f64,
    pub susceptible: bool,
    pub exact: bool,
    pub visits: (f64, f64),
}

/// Dataset for `spec` (stream 0 of `spec.seed`).
pub fn gen_scenario(spec: &ScenarioSpec) -> Result<Dataset> {
    let mut rng = stream_rng(spec.seed, 0);
    gen_scenario_with(spec, &mut rng).map(|(d, _)| d)
}

/// Draws a dataset and the latent subjects behind it from `rng`.
pub fn gen_scenario_with(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<(Dataset, Vec<LatentSubject>)> {
    if spec.n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if let Scenario::ScalarCure { p } = spec.scenario {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(format!("susceptible probability {p} outside (0, 1]")));
        }
    }
    let baseline = spec.model.baseline();
    let gamma = spec.scenario.gamma();
    let mut obs = Vec::with_capacity(spec.n);
    let mut latent = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z = vec![f64::from(u8::from(rng.gen_bool(0.6))), 2.0 * rng.gen::<f64>()];
        let eta = TRUE_BETA[0] * z[0] + TRUE_BETA[1] * z[1];
        let (x, p) = match (gamma, spec.scenario) {
            (Some(g), _) => {
                let x = vec![1.0, f64::from(u8::from(rng.gen_bool(0.8)))];
                let p = logistic(g[0] * x[0] + g[1] * x[1]);
                (x, p)
            }
            (None, Scenario::ScalarCure { p }) => (Vec::new(), p),
            _ => (Vec::new(), 1.0),
        };
        let susceptible = p >= 1.0 || rng.gen_bool(p);
        // 1 - U keeps the argument of ln away from zero
        let u: f64 = 1.0 - rng.gen::<f64>();
        let t = baseline.inverse_cumulative(-u.ln() * (-eta).exp());
        let exact = susceptible && spec.scenario.exact_share() > 0.0 && rng.gen_bool(spec.scenario.exact_share());
        let v1 = 60.0 * rng.gen::<f64>();
        let v2 = v1 + 120.0 * rng.gen::<f64>();
        let (left, right) = if exact {
            (t, t)
        } else if !susceptible || t > v2 {
            (v2, f64::INFINITY)
        } else if t <= v1 {
            (0.0, v1)
        } else {
            (v1, v2)
        };
        obs.push(Observation::with_cure_covariates(left, right, z, x)?);
        latent.push(LatentSubject { event_time: t, susceptible, exact, visits: (v1, v2) });
    }
    Ok((Dataset::new(obs)?, latent))
}

/// Replaces left- and interval-censored rows by exact times at the interval
/// midpoint.
pub fn midpoint_transform(data: &Dataset) -> Result<Dataset> {
    let obs = data
        .observations()
        .iter()
        .map(|o| {
            if o.right.is_finite() && !o.is_exact() {
                Observation::with_cure_covariates(
                    0.5 * (o.left + o.right),
                    0.5 * (o.left + o.right),
                    o.z.clone(),
                    o.x.clone(),
                )
            } else {
                Ok(o.clone())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(obs)
}

/// Fit of the midpoint-imputed data on a fixed grid.
pub fn midpoint_fit(data: &Dataset, grid: &CutGrid, config: &crate::mstep::FitConfig) -> Result<crate::mstep::FitResult> {
    crate::mstep::em_fit(&midpoint_transform(data)?, grid, config)
}
