//! Simulated data with a known truth and a Monte Carlo harness.

mod scenario;
mod study;

pub use scenario::{
    gen_scenario, gen_scenario_with, midpoint_fit, midpoint_transform, Baseline, BaselineModel, LatentSubject,
    Scenario, ScenarioSpec, EXACT_SHARE, M1_CUTS, M1_HAZARDS, TRUE_BETA, WEIBULL_SCALE, WEIBULL_SHAPE,
};
pub use study::{
    run_study, summarize, CoefficientMetrics, Estimator, MetricReport, ReplicateEstimate, StudyResult,
    SURVIVAL_HORIZON, SURVIVAL_STEP, TV_HORIZON, WINDOWS,
};
