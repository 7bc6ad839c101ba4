//! Independent oracles shared by the integration tests: quadrature, finite
//! differences, dense solves and random problem instances.
#![allow(dead_code)]

use icpch::{CureParams, CutGrid, Dataset, ModelParams, Observation};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7-15) on a finite interval.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth > 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if b <= a {
        return 0.0;
    }
    let (rough, _) = gk15(f, a, b);
    rec(f, a, b, rel_tol * rough.abs().max(1e-300), 0)
}

/// Integral over `[a, inf)` through `t = a + s / (1 - s)`.
pub fn integrate_to_infinity(f: &dyn Fn(f64) -> f64, a: f64, rel_tol: f64) -> f64 {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let t = a + s / (1.0 - s);
        let jac = 1.0 / ((1.0 - s) * (1.0 - s));
        let v = f(t) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(&g, 0.0, 1.0, rel_tol)
}

/// Central-difference gradient with step `h * max(1, |x_i|)`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            (f(&xp) - f(&xm)) / (2.0 * step)
        })
        .collect()
}

/// Central-difference Jacobian of a vector function, `J[r][c] = d g_r / d x_c`.
pub fn fd_jacobian(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = g(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for c in 0..x.len() {
        let step = h * x[c].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += step;
        xm[c] -= step;
        let (gp, gm) = (g(&xp), g(&xm));
        for r in 0..m {
            jac[(r, c)] = (gp[r] - gm[r]) / (2.0 * step);
        }
    }
    jac
}

pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn dense_solve(m: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    m.clone().lu().solve(&DVector::from_column_slice(rhs)).expect("nonsingular").iter().copied().collect()
}

/// Random grid with up to `max_cuts` cuts in `(0, 10)`.
pub fn random_grid(rng: &mut ChaCha8Rng, max_cuts: usize) -> CutGrid {
    let m = rng.gen_range(0..=max_cuts);
    let mut cuts: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..10.0)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 0.05);
    CutGrid::new(cuts).unwrap()
}

/// Random observation; times mostly in `(0, 12)`.
pub fn random_observation(rng: &mut ChaCha8Rng, dz: usize, dx: usize, allow_exact: bool) -> Observation {
    let z: Vec<f64> = (0..dz).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..dx).map(|j| if j == 0 { 1.0 } else { f64::from(u8::from(rng.gen_bool(0.5))) }).collect();
    let kind = rng.gen_range(0..if allow_exact { 4 } else { 3 });
    let a = rng.gen_range(0.05..8.0);
    let b = a + rng.gen_range(0.05..4.0);
    let (l, r) = match kind {
        0 => (0.0, a),
        1 => (a, b),
        2 => (a, f64::INFINITY),
        _ => (a, a),
    };
    Observation::with_cure_covariates(l, r, z, x).unwrap()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dz: usize, dx: usize, allow_exact: bool) -> Dataset {
    Dataset::new((0..n).map(|_| random_observation(rng, dz, dx, allow_exact)).collect()).unwrap()
}

pub fn random_params(rng: &mut ChaCha8Rng, k: usize, dz: usize) -> ModelParams {
    ModelParams::new(
        (0..k).map(|_| rng.gen_range(-2.5..-0.5)).collect(),
        (0..dz).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
}

/// Random symmetric positive definite tridiagonal matrix.
pub fn random_spd_tridiag(rng: &mut ChaCha8Rng, k: usize) -> icpch::linalg::SymTridiag {
    let off: Vec<f64> = (0..k.saturating_sub(1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let diag: Vec<f64> = (0..k)
        .map(|i| {
            let neighbours = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < k { off[i].abs() } else { 0.0 };
            neighbours + rng.gen_range(0.1..2.0)
        })
        .collect();
    icpch::linalg::SymTridiag::new(diag, off).unwrap()
}

/// Random structured Hessian whose negation is positive definite.
pub fn random_structured_hessian(rng: &mut ChaCha8Rng, k: usize, d: usize) -> icpch::linalg::StructuredHessian {
    let band = random_spd_tridiag(rng, k);
    let cross = DMatrix::from_fn(k, d, |_, _| rng.gen_range(-0.3..0.3) / (k as f64).sqrt());
    // C = B^T A^{-1} B + W W^T + I keeps the Schur complement positive definite
    let a_inv_b = {
        let mut m = DMatrix::zeros(k, d);
        for j in 0..d {
            let col: Vec<f64> = cross.column(j).iter().copied().collect();
            let x = icpch::linalg::band_ldl_solve(&band, &col).unwrap();
            m.set_column(j, &DVector::from_vec(x));
        }
        m
    };
    let w = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let c = cross.transpose() * a_inv_b + &w * w.transpose() + DMatrix::identity(d, d);
    icpch::linalg::StructuredHessian { a_block: band.scaled(-1.0), cross: -cross, dense: -c }
}

/// A and B rows by numerical integration of the conditional event density
/// over each piece of `(left, right)`.
pub fn quadrature_ab(obs: &Observation, theta: &ModelParams, grid: &CutGrid) -> (Vec<f64>, Vec<f64>) {
    let eta: f64 = theta.beta.iter().zip(&obs.z).map(|(b, z)| b * z).sum();
    let scale = eta.exp();
    let cum = |t: f64| scale * icpch::model::baseline_cumulative_hazard(t, &theta.log_hazard, grid).unwrap();
    let cum_left = cum(obs.left);
    let density = |t: f64| scale * theta.log_hazard[grid.piece_index(t)].exp() * (-(cum(t) - cum_left)).exp();
    let k = grid.n_pieces();
    let mut a = vec![0.0; k];
    let mut b = vec![0.0; k];
    for kk in 0..k {
        let lower = grid.lower(kk);
        let lo = lower.max(obs.left);
        let hi = grid.upper(kk).min(obs.right);
        if hi <= lo {
            continue;
        }
        // keep evaluation points strictly inside the piece
        let f = |t: f64| density(t.clamp(lo, hi));
        let g = |t: f64| (t - lower) * density(t.clamp(lo, hi));
        if hi.is_infinite() {
            a[kk] = integrate_to_infinity(&f, lo, 1e-14);
            b[kk] = integrate_to_infinity(&g, lo, 1e-14);
        } else {
            a[kk] = integrate(&f, lo, hi, 1e-14);
            b[kk] = integrate(&g, lo, hi, 1e-14);
        }
    }
    let mass: f64 = a.iter().sum();
    (a.iter().map(|v| v / mass).collect(), b.iter().map(|v| v / mass).collect())
}

pub struct Instance {
    pub data: Dataset,
    pub grid: CutGrid,
    pub theta_old: ModelParams,
    pub theta: ModelParams,
}

/// Random data, grid and two parameter points (E-step at `theta_old`).
pub fn instance(rng: &mut ChaCha8Rng, cure: bool) -> Instance {
    let grid = random_grid(rng, 5);
    let dz = rng.gen_range(0..=3);
    let n = rng.gen_range(5..30);
    let data = random_dataset(rng, n, dz, if cure { 2 } else { 0 }, true);
    let k = grid.n_pieces();
    let mut theta_old = random_params(rng, k, dz);
    let mut theta = random_params(rng, k, dz);
    if cure {
        theta_old = theta_old.with_cure(CureParams::Logistic(vec![0.8, -0.4]));
        theta = theta.with_cure(CureParams::Logistic(vec![0.3, 0.2]));
    }
    Instance { data, grid, theta_old, theta }
}

pub fn flat_ab(theta: &ModelParams) -> Vec<f64> {
    let mut v = theta.log_hazard.clone();
    v.extend_from_slice(&theta.beta);
    v
}

/// Copy of `template` with `(a, beta)` taken from `x`.
pub fn with_ab(template: &ModelParams, x: &[f64]) -> ModelParams {
    let k = template.log_hazard.len();
    let mut t = template.clone();
    t.log_hazard = x[..k].to_vec();
    t.beta = x[k..].to_vec();
    t
}
