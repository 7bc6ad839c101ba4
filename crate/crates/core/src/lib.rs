//! Cox regression with a piecewise-constant baseline hazard for left-,
//! interval- and right-censored data (optionally mixed with exact event
//! times and a cured fraction).
//!
//! Fitting is by EM on a fixed set of cuts ([`mstep::em_fit`]); the cuts
//! themselves are chosen by the adaptive ridge ([`ridge::regularization_path`]).

pub mod error;
pub mod estep;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod mstep;
pub mod ridge;
pub mod rng;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};
pub use model::{CensorClass, CureParams, CutGrid, Dataset, ModelParams, Observation, SurvivalMode};
pub use mstep::{em_fit, em_fit_with, CureModel, FitConfig, FitOptions, FitResult};
pub use ridge::{regularization_path, PathConfig, PathResult, PenaltyState};
