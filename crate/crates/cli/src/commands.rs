use std::fmt::Write as _;
use std::path::Path;

use icpch::inference::{bootstrap_ci, lr_confint, lr_test, BootstrapFit, Functional, LrInterval};
use icpch::io::{read_dataset_file, write_dataset_file};
use icpch::ridge::bic;
use icpch::rng::stream_rng;
use icpch::simulation::{gen_scenario_with, run_study, Estimator, ScenarioSpec};
use icpch::{em_fit, regularization_path, CureParams, CutGrid, Dataset, FitConfig, FitResult, PathConfig, PathResult};

use crate::args::{BootstrapArgs, EstimatorArg, FitArgs, ModelArgs, PathArgs, SimulateArgs};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn write_output(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_data(path: &Path) -> Result<Dataset> {
    read_dataset_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fit_config(model: &ModelArgs) -> FitConfig {
    FitConfig { cure: model.cure.into(), ..FitConfig::default() }
}

/// Selected (or given) fit and, unless the cuts were fixed, the path behind it.
fn fit_model(data: &Dataset, model: &ModelArgs) -> Result<(FitResult, Option<PathResult>)> {
    let grid = model.grid.grid();
    let config = fit_config(model);
    // a single piece leaves nothing to select
    if model.fixed_cuts || grid.n_pieces() < 2 {
        return Ok((em_fit(data, &grid, &config)?, None));
    }
    let path_config = PathConfig { fit: config, ..PathConfig::default() };
    let path = regularization_path(data, &grid, &model.penalties.0, &path_config)?;
    Ok((path.best_fit().clone(), Some(path)))
}

fn fmt_bound(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

fn fmt_list(values: &[f64]) -> String {
    if values.is_empty() {
        "none".into()
    } else {
        values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let data = read_data(&args.data)?;
    let (fit, path) = fit_model(&data, &args.model)?;
    if !fit.converged {
        // typically a boundary maximum, e.g. a hazard drifting to zero
        eprintln!("icpch: warning: EM stopped after {} iterations without converging", fit.n_em_iters);
    }
    let config = fit_config(&args.model);
    let k = fit.grid.n_pieces();
    let n = data.len();
    let [left, interval, right, exact] = data.class_counts();

    let mut out = String::new();
    let _ = writeln!(out, "# icpch fit");
    let _ = writeln!(out, "data\t{}", args.data.display());
    let _ = writeln!(out, "n\t{n}");
    let _ = writeln!(out, "classes\tleft={left} interval={interval} right={right} exact={exact}");
    let _ = writeln!(out, "selection\t{}", if path.is_some() { "adaptive-ridge" } else { "fixed" });
    let _ = writeln!(out, "cure\t{}", args.model.cure.name());
    let _ = writeln!(out, "alpha\t{}", args.alpha);
    let _ = writeln!(out, "seed\t{}", args.common.seed);
    let _ = writeln!(out, "cuts\t{}", fmt_list(fit.grid.interior()));
    let _ = writeln!(out, "loglik\t{}", fit.obs_loglik);
    let _ = writeln!(out, "bic\t{}", bic(fit.obs_loglik, fit.params.n_params(), n));
    let _ = writeln!(out, "converged\t{}", fit.converged);
    let _ = writeln!(out, "em_iterations\t{}", fit.n_em_iters);
    let _ = writeln!(out, "trace_monotone\t{}", fit.trace_is_monotone(1e-10));
    let pinned: Vec<f64> = fit.pinned.iter().map(|&p| p as f64 + 1.0).collect();
    let _ = writeln!(out, "pinned_pieces\t{}", fmt_list(&pinned));
    match &fit.params.cure {
        CureParams::None => {}
        CureParams::Scalar(p) => {
            let _ = writeln!(out, "susceptible_p\t{p}");
        }
        CureParams::Logistic(gamma) => {
            let _ = writeln!(out, "cure_gamma\t{}", fmt_list(gamma));
        }
    }

    let _ = writeln!(out, "\n[baseline hazard]");
    let _ = writeln!(out, "piece\tlower\tupper\thazard\tci_lower\tci_upper");
    for kk in 0..k {
        let (lo, hi) = if fit.pinned.contains(&kk) {
            ("NA".to_string(), "NA".to_string())
        } else {
            let ci = lr_confint(&data, &fit, kk, args.alpha, &config)?.map(f64::exp);
            (fmt_bound(ci.lower), fmt_bound(ci.upper))
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{lo}\t{hi}",
            kk + 1,
            fit.grid.lower(kk),
            fmt_bound(fit.grid.upper(kk)),
            fit.params.log_hazard[kk].exp()
        );
    }

    let _ = writeln!(out, "\n[coefficients]");
    let _ = writeln!(out, "covariate\tbeta\tci_lower\tci_upper\thazard_ratio\thr_lower\thr_upper\tlr_stat\tp_value");
    for (j, &b) in fit.params.beta.iter().enumerate() {
        let ci: LrInterval = lr_confint(&data, &fit, k + j, args.alpha, &config)?;
        let test = lr_test(&data, &fit, &[(k + j, 0.0)], &config)?;
        let _ = writeln!(
            out,
            "z_{}\t{b}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            j + 1,
            fmt_bound(ci.lower),
            fmt_bound(ci.upper),
            b.exp(),
            fmt_bound(ci.lower.exp()),
            fmt_bound(ci.upper.exp()),
            test.statistic,
            test.p_value
        );
    }

    if let Some(path) = &path {
        let _ = writeln!(out, "\n[path]");
        let _ = writeln!(out, "penalty\tcuts\tm\tbic\tselected");
        for e in &path.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.pen,
                e.selected.len(),
                e.m,
                e.bic.map_or_else(|| "NA".to_string(), |v| v.to_string()),
                fmt_list(e.selected_cuts.interior())
            );
        }
    }
    write_output(args.common.output.as_deref(), &out)
}

pub fn cmd_path(args: &PathArgs) -> Result<()> {
    let data = read_data(&args.data)?;
    let config = PathConfig { fit: FitConfig { cure: args.cure.into(), ..FitConfig::default() }, ..PathConfig::default() };
    let path = regularization_path(&data, &args.grid.grid(), &args.penalties.0, &config)?;
    write_output(args.common.output.as_deref(), &path.to_columns())
}

pub fn cmd_bootstrap(args: &BootstrapArgs) -> Result<()> {
    if args.reps < 2 {
        return Err(CliError::Usage("--reps must be at least 2".into()));
    }
    let data = read_data(&args.data)?;
    let grid: CutGrid = args.model.grid.grid();
    let times = match &args.times {
        Some(t) => t.clone(),
        None => grid.interior().to_vec(),
    };
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CliError::Usage("--times must be nonnegative and finite".into()));
    }
    let config = fit_config(&args.model);
    let single = grid.n_pieces() < 2;
    let fit = if args.model.fixed_cuts || single {
        BootstrapFit::FixedCuts { grid, config }
    } else {
        BootstrapFit::Path {
            grid,
            penalties: args.model.penalties.0.clone(),
            config: PathConfig { fit: config, ..PathConfig::default() },
        }
    };
    let mut parts: Vec<Functional> = (0..data.dz()).map(Functional::Beta).collect();
    parts.push(Functional::BaselineSurvival(times.clone()));
    let bands = bootstrap_ci(&data, &fit, &Functional::Concat(parts), args.reps, args.alpha, args.common.seed)?;

    let mut out = String::new();
    let _ = writeln!(out, "# icpch bootstrap");
    let _ = writeln!(out, "data\t{}", args.data.display());
    let _ = writeln!(out, "selection\t{}", if matches!(fit, BootstrapFit::Path { .. }) { "adaptive-ridge" } else { "fixed" });
    let _ = writeln!(out, "replicates\t{}", bands.replicates);
    let _ = writeln!(out, "failed\t{}", bands.failed);
    let _ = writeln!(out, "alpha\t{}", args.alpha);
    let _ = writeln!(out, "seed\t{}", args.common.seed);
    let _ = writeln!(out, "\nquantity\tpoint\tlower\tupper");
    let names = (1..=data.dz()).map(|j| format!("beta_{j}")).chain(times.iter().map(|t| format!("S0({t})")));
    for (i, name) in names.enumerate() {
        let _ = writeln!(out, "{name}\t{}\t{}\t{}", bands.point[i], bands.lower[i], bands.upper[i]);
    }
    write_output(args.common.output.as_deref(), &out)
}

pub fn estimators(args: &SimulateArgs) -> Vec<Estimator> {
    let grid = args.cuts.clone().unwrap_or_else(|| args.grid.clone());
    let config = FitConfig { cure: args.cure.into(), ..FitConfig::default() };
    let intervals = !args.no_intervals;
    args.estimators
        .iter()
        .map(|e| match e {
            EstimatorArg::AdaptiveRidge => Estimator::AdaptiveRidge {
                grid: grid.clone(),
                penalties: args.penalties.0.clone(),
                config: PathConfig { fit: config.clone(), ..PathConfig::default() },
                intervals,
            },
            EstimatorArg::Midpoint => Estimator::Midpoint { grid: grid.clone(), config: config.clone(), intervals },
            EstimatorArg::FixedCuts => Estimator::FixedCuts { grid: grid.clone(), config: config.clone(), intervals },
            EstimatorArg::Truth => Estimator::Truth,
        })
        .collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.n == 0 || args.reps == 0 {
        return Err(CliError::Usage("--n and --reps must be positive".into()));
    }
    let spec = ScenarioSpec::new(args.model, args.scenario, args.n, args.common.seed);
    if let Some(path) = &args.data_out {
        let (data, _) = gen_scenario_with(&spec, &mut stream_rng(spec.seed, 0))?;
        write_dataset_file(&data, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    let study = run_study(&spec, args.reps, &estimators(args), args.alpha)?;
    if let Some(path) = &args.records {
        write_output(Some(path), &study.to_records()?)?;
    }
    write_output(args.common.output.as_deref(), &study.to_table())
}
