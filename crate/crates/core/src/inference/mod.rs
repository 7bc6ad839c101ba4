//! Likelihood-based inference with the cuts treated as fixed.

mod bootstrap;
mod lr;
mod observed;
mod variance;

pub use bootstrap::{
    bootstrap_ci, bootstrap_ci_with, quantile_sorted, BootstrapBands, BootstrapFit, CaseResampler, Functional,
    Resampler, MAX_FAILED_SHARE,
};
pub use lr::{
    lr_confint, lr_test, polish, profile_fit, profile_interval, LrInterval, LrTest, ProfilePoint, BRACKET_DOUBLINGS,
    INITIAL_BRACKET,
};
pub use observed::{maximize_observed, observed_loglik, observed_score_hessian, ObservedFit, ObservedModelFunctions};
pub use variance::{asymptotic_variance, wald_interval, AsymptoticVariance};
