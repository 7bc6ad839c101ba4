//! End-to-end acceptance checks. Runs as a plain binary (`harness = false`),
//! prints one line per criterion and exits nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use icpch::estep::{interval_stats, q_value, EStepBundle};
use icpch::inference::{lr_confint, observed_loglik, observed_score_hessian, profile_interval};
use icpch::linalg::{band_ldl_solve, newton_step_schur};
use icpch::mstep::{maximize_q_newton, newton_step_dense, np_closed_form, q_score_hessian};
use icpch::ridge::{default_penalties, penalized_score_hessian, PenaltyState};
use icpch::simulation::{
    gen_scenario, run_study, BaselineModel, Estimator, Scenario, ScenarioSpec, StudyResult, M1_CUTS, M1_HAZARDS,
    TRUE_BETA,
};
use icpch::{
    em_fit, em_fit_with, regularization_path, CureModel, CutGrid, FitConfig, FitOptions, FitResult, PathConfig,
};
use rand::Rng;

const Z95: f64 = 1.959_963_984_540_054;
const STUDY_N: usize = 400;
const STUDY_REPS: usize = 100;
const CURE_REPS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// Fits whose traces criterion 4 inspects, gathered from every criterion.
#[derive(Default)]
struct TraceLog {
    fits: usize,
    broken: usize,
}

impl TraceLog {
    fn record(&mut self, fit: &FitResult) {
        self.record_flag(fit.trace_is_monotone(1e-10));
    }

    fn record_flag(&mut self, monotone: bool) {
        self.fits += 1;
        if !monotone {
            self.broken += 1;
        }
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    rel_err_vec(a, b)
}

fn criterion_1() -> Outcome {
    let mut rng = rng(1001);
    let (mut worst_ab, mut worst_sum) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let grid = random_grid(&mut rng, 8);
        let obs = random_observation(&mut rng, 2, 0, false);
        let theta = random_params(&mut rng, grid.n_pieces(), 2);
        let (a, b) = interval_stats(&obs, &theta, &grid).unwrap();
        let (qa, qb) = quadrature_ab(&obs, &theta, &grid);
        for kk in 0..grid.n_pieces() {
            worst_ab = worst_ab.max((a[kk] - qa[kk]).abs() / qa[kk].abs().max(1e-12));
            worst_ab = worst_ab.max((b[kk] - qb[kk]).abs() / qb[kk].abs().max(1e-12));
        }
        worst_sum = worst_sum.max((a.iter().sum::<f64>() - 1.0).abs());
        if i % 250 == 0 {
            // right-censored rows exercise the unbounded tail
            let tail = icpch::Observation::new(obs.left, f64::INFINITY, obs.z.clone()).unwrap();
            let (a, _) = interval_stats(&tail, &theta, &grid).unwrap();
            worst_sum = worst_sum.max((a.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Outcome::new(
        worst_ab <= 1e-8 && worst_sum <= 1e-10,
        format!("1000 instances, max rel err A/B {worst_ab:.2e} (tol 1e-8), max |sum A - 1| {worst_sum:.2e} (tol 1e-10)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = rng(1002);
    let (mut g_q, mut h_q, mut g_pen, mut h_pen, mut g_obs, mut h_obs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for case in 0..200 {
        let inst = instance(&mut rng, case % 3 == 0);
        let bundle = EStepBundle::build(&inst.data, &inst.theta_old, &inst.grid).unwrap();
        let q = |x: &[f64]| q_value(&with_ab(&inst.theta, x), &bundle, &inst.data, &inst.grid).unwrap();
        let x0 = flat_ab(&inst.theta);
        let (g, h) = q_score_hessian(&inst.theta, &bundle, &inst.data, &inst.grid).unwrap();
        g_q = g_q.max(max_rel(&g, &fd_gradient(&q, &x0, 1e-5)));
        let grad = |x: &[f64]| q_score_hessian(&with_ab(&inst.theta, x), &bundle, &inst.data, &inst.grid).unwrap().0;
        h_q = h_q.max(rel_err_mat(&h.to_dense(), &fd_jacobian(&grad, &x0, 1e-5)));
    }
    let mut tested = 0;
    while tested < 200 {
        let inst = instance(&mut rng, false);
        let k = inst.grid.n_pieces();
        if k < 2 {
            continue;
        }
        tested += 1;
        let mut state = PenaltyState::new(k, rng.gen_range(0.1..50.0), 1e-5).unwrap();
        state.weights = (0..k - 1).map(|_| rng.gen_range(0.1..5.0)).collect();
        let bundle = EStepBundle::build(&inst.data, &inst.theta_old, &inst.grid).unwrap();
        let obj = |x: &[f64]| {
            let t = with_ab(&inst.theta, x);
            q_value(&t, &bundle, &inst.data, &inst.grid).unwrap() - state.penalty_value(&t.log_hazard)
        };
        let x0 = flat_ab(&inst.theta);
        let (g, h) = penalized_score_hessian(&inst.theta, &bundle, &inst.data, &inst.grid, &state).unwrap();
        g_pen = g_pen.max(max_rel(&g, &fd_gradient(&obj, &x0, 1e-5)));
        let grad = |x: &[f64]| {
            penalized_score_hessian(&with_ab(&inst.theta, x), &bundle, &inst.data, &inst.grid, &state).unwrap().0
        };
        h_pen = h_pen.max(rel_err_mat(&h.to_dense(), &fd_jacobian(&grad, &x0, 1e-5)));
    }
    for _ in 0..200 {
        let inst = instance(&mut rng, false);
        let f = |x: &[f64]| observed_loglik(&with_ab(&inst.theta, x), &inst.data, &inst.grid).unwrap();
        let x0 = flat_ab(&inst.theta);
        let obs = observed_score_hessian(&inst.theta, &inst.data, &inst.grid).unwrap();
        g_obs = g_obs.max(max_rel(&obs.score, &fd_gradient(&f, &x0, 1e-5)));
        let grad = |x: &[f64]| observed_score_hessian(&with_ab(&inst.theta, x), &inst.data, &inst.grid).unwrap().score;
        h_obs = h_obs.max(rel_err_mat(&obs.hessian, &fd_jacobian(&grad, &x0, 1e-5)));
    }
    let pass = g_q.max(g_pen).max(g_obs) <= 1e-6 && h_q.max(h_pen).max(h_obs) <= 1e-5;
    Outcome::new(
        pass,
        format!(
            "3x200 instances, gradient {g_q:.1e}/{g_pen:.1e}/{g_obs:.1e} (tol 1e-6), \
             Hessian {h_q:.1e}/{h_pen:.1e}/{h_obs:.1e} (tol 1e-5) for Q/penalized/observed"
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = rng(1003);
    let (mut band_err, mut schur_err) = (0.0f64, 0.0f64);
    for &k in &[1usize, 2, 5, 17, 50, 120, 200] {
        for _ in 0..5 {
            let band = random_spd_tridiag(&mut rng, k);
            let rhs: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let x = band_ldl_solve(&band, &rhs).unwrap();
            band_err = band_err.max(max_rel(&x, &dense_solve(&band.to_dense(), &rhs)));
            for d in [0usize, 1, 3, 5] {
                let h = random_structured_hessian(&mut rng, k, d);
                let g: Vec<f64> = (0..k + d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let schur = newton_step_schur(&g, &h).unwrap();
                schur_err = schur_err.max(max_rel(&schur, &newton_step_dense(&g, &h).unwrap()));
            }
        }
    }
    Outcome::new(
        band_err <= 1e-9 && schur_err <= 1e-9,
        format!("K up to 200, d up to 5: band LDL {band_err:.1e}, Schur {schur_err:.1e} (tol 1e-9)"),
    )
}

fn criterion_4(log: &mut TraceLog) -> Outcome {
    let mut rng = rng(1004);
    for case in 0..60 {
        let grid = random_grid(&mut rng, 6);
        let dz = rng.gen_range(0..3);
        let cure = case % 4 == 3;
        let data = random_dataset(&mut rng, 60, dz, if cure { 2 } else { 0 }, case % 2 == 0);
        let config = FitConfig { cure: if cure { CureModel::Logistic } else { CureModel::None }, ..FitConfig::default() };
        log.record(&em_fit(&data, &grid, &config).unwrap());
        let scalar = FitConfig { cure: CureModel::Scalar, ..FitConfig::default() };
        log.record(&em_fit(&data, &grid, &scalar).unwrap());
        let k = grid.n_pieces();
        if k >= 2 {
            let mut penalty = PenaltyState::new(k, rng.gen_range(0.1..20.0), 1e-5).unwrap();
            penalty.weights = (0..k - 1).map(|_| rng.gen_range(0.1..3.0)).collect();
            let options = FitOptions { penalty: Some(&penalty), ..FitOptions::default() };
            log.record(&em_fit_with(&data, &grid, &FitConfig::default(), &options).unwrap());
        }
    }
    let data = gen_scenario(&ScenarioSpec::new(BaselineModel::M1, Scenario::S1, STUDY_N, 1004)).unwrap();
    let path = regularization_path(&data, &study_grid(), &default_penalties(), &PathConfig::default()).unwrap();
    for fit in &path.refits {
        log.record(fit);
    }

    let mut closed_err = 0.0f64;
    for _ in 0..100 {
        let grid = random_grid(&mut rng, 6);
        let data = random_dataset(&mut rng, 40, 0, 0, true);
        let theta = random_params(&mut rng, grid.n_pieces(), 0);
        let bundle = EStepBundle::build(&data, &theta, &grid).unwrap();
        let closed = np_closed_form(&bundle, -30.0);
        let newton = maximize_q_newton(&theta, &bundle, &data, &grid, None).unwrap();
        let events = bundle.event_totals();
        for kk in 0..grid.n_pieces() {
            if events[kk] > 1e-6 {
                closed_err = closed_err.max((closed[kk] - newton.log_hazard[kk]).abs());
            }
        }
    }
    Outcome::new(
        closed_err <= 1e-8,
        format!("closed form vs Newton max |diff| {closed_err:.1e} over 100 instances (tol 1e-8)"),
    )
}

fn criterion_5(log: &mut TraceLog, intervals: &mut Vec<(f64, f64, f64)>) -> Outcome {
    let data = gen_scenario(&ScenarioSpec::new(BaselineModel::M1, Scenario::S1, 10_000, 0)).unwrap();
    let grid = CutGrid::new(M1_CUTS.to_vec()).unwrap();
    let config = FitConfig::default();
    let fit = em_fit(&data, &grid, &config).unwrap();
    log.record(&fit);
    let da = fit
        .params
        .log_hazard
        .iter()
        .zip(M1_HAZARDS)
        .map(|(a, h)| (a - h.ln()).abs())
        .fold(0.0, f64::max);
    let db: Vec<f64> = fit.params.beta.iter().zip(TRUE_BETA).map(|(b, t)| (b - t).abs()).collect();
    let k = grid.n_pieces();
    for j in 0..2 {
        let ci = lr_confint(&data, &fit, k + j, 0.05, &config).unwrap();
        intervals.push((ci.lower, fit.params.beta[j], ci.upper));
    }
    Outcome::new(
        fit.converged && da < 0.1 && db.iter().all(|&d| d < 0.05),
        format!("n=10000 seed 0: max |a - a0| {da:.3} (tol 0.1), |b - b0| {:.3}/{:.3} (tol 0.05)", db[0], db[1]),
    )
}

fn study_grid() -> CutGrid {
    CutGrid::equally_spaced(10.0, 90.0, 5.0).unwrap()
}

fn main_study() -> StudyResult {
    let grid = study_grid();
    let estimators = [
        Estimator::AdaptiveRidge {
            grid: grid.clone(),
            penalties: default_penalties(),
            config: PathConfig::default(),
            intervals: true,
        },
        Estimator::Midpoint { grid, config: FitConfig::default(), intervals: false },
    ];
    let spec = ScenarioSpec::new(BaselineModel::M1, Scenario::S1, STUDY_N, 1);
    run_study(&spec, STUDY_REPS, &estimators, 0.05).unwrap()
}

fn criterion_6(study: &StudyResult) -> Outcome {
    let ar = &study.reports[0];
    let (b1, b2) = (ar.beta[0].bias, ar.beta[1].bias);
    let (cp1, cp2) = (ar.beta[0].cp.unwrap(), ar.beta[1].cp.unwrap());
    let cp_ok = |c: f64| (0.88..=0.99).contains(&c);
    Outcome::new(
        (b1 - 0.0116).abs() <= 0.04 && (b2 + 0.0137).abs() <= 0.03 && cp_ok(cp1) && cp_ok(cp2),
        format!(
            "n=400 M=100 ({} failed): bias {b1:.4}/{b2:.4} (0.0116 +- 0.04, -0.0137 +- 0.03), CP {cp1:.2}/{cp2:.2} (in [0.88, 0.99])",
            ar.failed
        ),
    )
}

fn criterion_7(study: &StudyResult) -> Outcome {
    let (ar, mid) = (&study.reports[0], &study.reports[1]);
    Outcome::new(
        ar.ibias2 < 0.01 && ar.mise < mid.mise,
        format!("IBias2 {:.5} (< 0.01), MISE adaptive ridge {:.5} vs midpoint {:.5}", ar.ibias2, ar.mise, mid.mise),
    )
}

fn criterion_8(study: &StudyResult) -> Outcome {
    let ar = &study.reports[0];
    let modal = ar.modal_cut_count();
    let window = study_window_share(study);
    Outcome::new(
        (1..=2).contains(&modal) && window >= 0.80,
        format!("modal cut count {modal} (1 or 2), share with a cut in [35, 55] {window:.2} (>= 0.80)"),
    )
}

fn study_window_share(study: &StudyResult) -> f64 {
    let ar = &study.reports[0];
    let idx = icpch::simulation::WINDOWS.iter().position(|&w| w == (35.0, 55.0)).expect("window is tracked");
    ar.window_shares[idx]
}

fn criterion_9(study: &StudyResult) -> Outcome {
    let at_400 = study.reports[1].beta[0].bias;
    let spec = ScenarioSpec::new(BaselineModel::M1, Scenario::S1, 1000, 2);
    let midpoint = Estimator::Midpoint { grid: study_grid(), config: FitConfig::default(), intervals: false };
    let at_1000 = run_study(&spec, STUDY_REPS, &[midpoint], 0.05).unwrap().reports[0].beta[0].bias;
    Outcome::new(
        at_400 <= -0.10 && at_1000 <= -0.10,
        format!("midpoint bias of b1 {at_400:.4} at n=400, {at_1000:.4} at n=1000 (<= -0.10)"),
    )
}

fn criterion_10(log: &mut TraceLog) -> Outcome {
    let estimator = Estimator::FixedCuts {
        grid: CutGrid::new(M1_CUTS.to_vec()).unwrap(),
        config: FitConfig { cure: CureModel::Scalar, ..FitConfig::default() },
        intervals: false,
    };
    let susceptible = ScenarioSpec::new(BaselineModel::M1, Scenario::S1, STUDY_N, 3);
    let none_cured = run_study(&susceptible, CURE_REPS, std::slice::from_ref(&estimator), 0.05).unwrap();
    let cured = ScenarioSpec::new(BaselineModel::M1, Scenario::ScalarCure { p: 0.7 }, STUDY_N, 4);
    let some_cured = run_study(&cured, CURE_REPS, &[estimator], 0.05).unwrap();
    for study in [&none_cured, &some_cured] {
        for rec in study.records[0].iter().flatten() {
            log.record_flag(rec.monotone);
        }
    }
    // share of all replicates, failures counting against the criterion
    let above = none_cured.records[0].iter().filter(|r| r.as_ref().is_some_and(|r| r.p_hat.unwrap() > 0.95)).count()
        as f64
        / CURE_REPS as f64;
    let mean = some_cured.reports[0].p_hat_mean.unwrap();
    Outcome::new(
        above >= 0.90 && (mean - 0.712).abs() <= 0.05,
        format!("p=1: share with p_hat > 0.95 {above:.2} (>= 0.90); p=0.7: mean p_hat {mean:.4} (0.712 +- 0.05)"),
    )
}

fn criterion_11(study: &StudyResult, intervals: &[(f64, f64, f64)]) -> Outcome {
    let mut toy_err = 0.0f64;
    for &(center, s) in &[(0.0, 1.0), (1.3, 0.05), (-2.0, 3.0), (0.7, 12.0), (5.0, 0.4)] {
        let interval = profile_interval(center, Z95 * Z95, |t: f64| Ok(-(t - center).powi(2) / (2.0 * s * s))).unwrap();
        toy_err = toy_err.max((interval.lower - (center - Z95 * s)).abs()).max((interval.upper - (center + Z95 * s)).abs());
    }
    let mut all: Vec<(f64, f64, f64)> = intervals.to_vec();
    for rec in study.records[0].iter().flatten() {
        if let Some(cis) = &rec.beta_ci {
            all.extend(cis.iter().zip(&rec.beta).map(|(&(lo, hi), &b)| (lo, b, hi)));
        }
    }
    let outside = all.iter().filter(|(lo, b, hi)| !(lo <= b && b <= hi)).count();
    Outcome::new(
        toy_err <= 1e-6 && outside == 0,
        format!("toy endpoint err {toy_err:.1e} (tol 1e-6), {outside} of {} LR intervals miss their MLE", all.len()),
    )
}

fn run(n: usize, f: impl FnOnce() -> Outcome, failures: &mut Vec<usize>) {
    let start = Instant::now();
    let outcome = f();
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict}  {}  [{:.1}s]", outcome.detail, start.elapsed().as_secs_f64());
    if !outcome.pass {
        failures.push(n);
    }
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as --list; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failures = Vec::new();
    let mut log = TraceLog::default();
    let mut intervals = Vec::new();
    run(1, criterion_1, &mut failures);
    run(2, criterion_2, &mut failures);
    run(3, criterion_3, &mut failures);
    let start = Instant::now();
    let c4 = criterion_4(&mut log);
    let c4_secs = start.elapsed().as_secs_f64();
    run(5, || criterion_5(&mut log, &mut intervals), &mut failures);

    let start = Instant::now();
    let study = main_study();
    println!("study: adaptive ridge and midpoint, M1/S1 n={STUDY_N} M={STUDY_REPS} [{:.1}s]", start.elapsed().as_secs_f64());
    for rec in study.records.iter().flatten().flatten() {
        log.record_flag(rec.monotone);
    }
    run(6, || criterion_6(&study), &mut failures);
    run(7, || criterion_7(&study), &mut failures);
    run(8, || criterion_8(&study), &mut failures);
    run(9, || criterion_9(&study), &mut failures);
    run(10, || criterion_10(&mut log), &mut failures);
    run(11, || criterion_11(&study, &intervals), &mut failures);

    // criterion 4 covers the fits of every other criterion, so it reports last
    run(
        4,
        || {
            let pass = c4.pass && log.broken == 0;
            Outcome::new(
                pass,
                format!("{}; {} of {} fitted traces decrease (slack 1e-10) [{c4_secs:.1}s own fits]", c4.detail, log.broken, log.fits),
            )
        },
        &mut failures,
    );

    if failures.is_empty() {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        failures.sort_unstable();
        println!("acceptance: failing criteria {failures:?}");
        ExitCode::FAILURE
    }
}
