use nalgebra::DMatrix;
use qrcov::asymptotics::{limiting_dual_law, solve_asymptotic, AsymptoticProblem};
use qrcov::calibrate::{
    calibrate_additive, calibrate_additive_ridge, calibrate_level, calibrate_level_ridge, default_lambda_grid,
    CalibrationResult,
};
use qrcov::conformal::{Cutoff, DualThresholdPredictor};
use qrcov::experiments::{run_figure, Figure, FigureConfig, Setting};
use qrcov::loo::loo_coverage_dual;
use qrcov::metrics::{cqr_predict, evaluate, interval_predict, IntervalMethod, IntervalOptions};
use qrcov::{fit, Dataset, ProblemSpec, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::*;
use crate::error::CliError;
use crate::output::{csv_key_values, csv_table, Output};

type Res = Result<Output, CliError>;

fn data_error(msg: impl Into<String>) -> CliError {
    CliError::Core(qrcov::Error::Data(msg.into()))
}

/// Flag checks that must pass before any data is read.
fn open_unit(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must lie in (0, 1), got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be a finite non-negative number, got {v}")))
    }
}

fn load(data: &DataArgs) -> Result<Dataset, CliError> {
    Ok(Dataset::from_csv_path(&data.csv, &data.response)?)
}

/// Test points from `--x` or `--test-csv`, with responses when known.
fn test_points(
    x: &Option<Vec<f64>>,
    test_csv: &Option<std::path::PathBuf>,
    response: &str,
    d: usize,
) -> Result<Vec<(Vec<f64>, Option<f64>)>, CliError> {
    let points = match (x, test_csv) {
        (Some(x), None) => vec![(x.clone(), None)],
        (None, Some(path)) => {
            let test = Dataset::from_csv_path(path, response)?;
            (0..test.n())
                .map(|i| (test.row(i).iter().copied().collect(), Some(test.response()[i])))
                .collect()
        }
        _ => return Err(CliError::Usage("give exactly one of --x or --test-csv".into())),
    };
    if let Some((p, _)) = points.iter().find(|(p, _)| p.len() != d) {
        return Err(data_error(format!("test point has {} features, training data has {d}", p.len())));
    }
    Ok(points)
}

#[derive(Serialize)]
struct FitSummary {
    tau: f64,
    lambda: f64,
    intercept_mode: qrcov::InterceptMode,
    intercept_or_offset: f64,
    beta: Vec<f64>,
    objective: f64,
    loo_coverage: f64,
    tie_count: usize,
    kkt: qrcov::KktCertificate,
}

#[derive(Serialize)]
struct SampleRow {
    index: usize,
    response: f64,
    residual: f64,
    dual: f64,
    loo_covered: bool,
}

pub fn fit_cmd(a: &FitArgs, solver: &SolverConfig) -> Res {
    let mut spec = ProblemSpec::new(a.tau, a.lambda)?;
    if let Some(c) = a.offset {
        spec = spec.with_offset(c);
        spec.validate()?;
    }
    let ds = load(&a.data)?;
    let f = fit(&ds, &spec, solver)?;
    let loo = loo_coverage_dual(&f);
    let rows: Vec<SampleRow> = (0..ds.n())
        .map(|i| SampleRow {
            index: i,
            response: ds.response()[i],
            residual: f.residuals[i],
            dual: f.duals[i],
            loo_covered: loo.per_sample_covered[i],
        })
        .collect();
    let summary = FitSummary {
        tau: f.tau,
        lambda: f.lambda,
        intercept_mode: f.intercept_mode,
        intercept_or_offset: f.intercept_or_offset,
        beta: f.beta.iter().copied().collect(),
        objective: f.primal_objective(),
        loo_coverage: loo.coverage,
        tie_count: loo.tie_count,
        kkt: f.kkt.clone(),
    };
    Output::new(&summary, csv_table(&rows)?)
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    method: &'a qrcov::calibrate::CalibrationMethod,
    target: f64,
    tau_adj: Option<f64>,
    c: Option<f64>,
    lambda: Option<f64>,
    loo_coverage: f64,
    loo_multiaccuracy: Option<f64>,
    within_tolerance: bool,
    saturated: bool,
    flags: &'a [qrcov::calibrate::CalibrationFlag],
    intercept_or_offset: f64,
    beta: Vec<f64>,
    search_trace: &'a [(f64, f64)],
    multiaccuracy_trace: &'a [(f64, f64)],
}

#[derive(Serialize)]
struct TraceRow {
    parameter: f64,
    loo_coverage: f64,
}

fn calibration_output(r: &CalibrationResult, tau: f64) -> Res {
    let summary = CalibrationSummary {
        method: &r.method,
        target: tau,
        tau_adj: r.tau_adj,
        c: r.c,
        lambda: r.lambda,
        loo_coverage: r.loo_coverage,
        loo_multiaccuracy: r.loo_multiaccuracy,
        within_tolerance: r.within_tolerance(tau),
        saturated: r.is_saturated(),
        flags: &r.flags,
        intercept_or_offset: r.final_fit.intercept_or_offset,
        beta: r.final_fit.beta.iter().copied().collect(),
        search_trace: &r.search_trace,
        multiaccuracy_trace: &r.multiaccuracy_trace,
    };
    let rows: Vec<TraceRow> = r
        .search_trace
        .iter()
        .map(|&(parameter, loo_coverage)| TraceRow { parameter, loo_coverage })
        .collect();
    Output::new(&summary, csv_table(&rows)?)
}

fn check_calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    open_unit("tau", a.tau)?;
    non_negative("lambda", a.lambda)?;
    a.lambda_top.map_or(Ok(()), |t| non_negative("lambda-top", t))
}

pub fn calibrate_level_cmd(a: &CalibrateArgs, solver: &SolverConfig) -> Res {
    check_calibrate(a)?;
    let ds = load(&a.data)?;
    let r = match a.lambda_top {
        Some(top) => calibrate_level_ridge(&ds, a.tau, &default_lambda_grid(ds.n(), top), solver)?,
        None => calibrate_level(&ds, a.tau, a.lambda, solver)?,
    };
    calibration_output(&r, a.tau)
}

pub fn calibrate_additive_cmd(a: &AdditiveArgs, solver: &SolverConfig) -> Res {
    let c = &a.calibrate;
    check_calibrate(c)?;
    if !(a.c_lo < a.c_hi) {
        return Err(CliError::Usage("--c-lo must be below --c-hi".into()));
    }
    let ds = load(&c.data)?;
    let range = (a.c_lo, a.c_hi);
    let r = match c.lambda_top {
        Some(top) => calibrate_additive_ridge(&ds, c.tau, &default_lambda_grid(ds.n(), top), range, solver)?,
        None => calibrate_additive(&ds, c.tau, c.lambda, range, solver)?,
    };
    calibration_output(&r, c.tau)
}

#[derive(Serialize)]
struct CutoffRow {
    index: usize,
    threshold: Option<f64>,
    cutoff: f64,
    sentinel: bool,
    y: Option<f64>,
    covered: Option<bool>,
}

#[derive(Serialize)]
struct CutoffSummary<'a> {
    tau: f64,
    lambda: f64,
    fixed_threshold: Option<f64>,
    coverage: Option<f64>,
    points: &'a [CutoffRow],
}

fn cutoff_row(index: usize, threshold: Option<f64>, c: Cutoff, y: Option<f64>) -> CutoffRow {
    CutoffRow {
        index,
        threshold,
        cutoff: c.value,
        sentinel: c.sentinel,
        y,
        covered: y.map(|y| y <= c.value),
    }
}

fn coverage(rows: &[CutoffRow]) -> Option<f64> {
    let flags: Option<Vec<bool>> = rows.iter().map(|r| r.covered).collect();
    flags.map(|f| f.iter().filter(|&&c| c).count() as f64 / f.len().max(1) as f64)
}

fn predictor_setup<'a>(
    ds: &'a Dataset,
    p: &PointArgs,
    solver: &SolverConfig,
) -> Result<(DualThresholdPredictor<'a>, Vec<(Vec<f64>, Option<f64>)>), CliError> {
    let points = test_points(&p.x, &p.test_csv, &p.data.response, ds.d())?;
    let spec = ProblemSpec::new(p.tau, p.lambda)?;
    Ok((DualThresholdPredictor::new(ds, &spec, solver)?, points))
}

pub fn dual_threshold_cmd(a: &ThresholdArgs, solver: &SolverConfig) -> Res {
    let p = &a.point;
    ProblemSpec::new(p.tau, p.lambda)?;
    let ds = load(&p.data)?;
    let (pred, points) = predictor_setup(&ds, p, solver)?;
    let t_hat = pred.fixed_threshold()?;
    let tau = p.tau;
    let mut rng = a.random.map(ChaCha8Rng::seed_from_u64);
    let mut rows = Vec::with_capacity(points.len());
    for (i, (x, y)) in points.iter().enumerate() {
        let t = match rng.as_mut() {
            Some(rng) => loop {
                let u = rng.random_range(-(1.0 - tau)..tau);
                if u > -(1.0 - tau) {
                    break u;
                }
            },
            None => a.t.unwrap_or(t_hat),
        };
        rows.push(cutoff_row(i, Some(t), pred.quantile_dual_threshold(x, t)?, *y));
    }
    let summary = CutoffSummary {
        tau,
        lambda: p.lambda,
        fixed_threshold: Some(t_hat),
        coverage: coverage(&rows),
        points: &rows,
    };
    Output::new(&summary, csv_table(&rows)?)
}

pub fn conformal_cmd(a: &PointArgs, solver: &SolverConfig) -> Res {
    ProblemSpec::new(a.tau, a.lambda)?;
    let ds = load(&a.data)?;
    let (pred, points) = predictor_setup(&ds, a, solver)?;
    let rows = points
        .iter()
        .enumerate()
        .map(|(i, (x, y))| Ok(cutoff_row(i, None, pred.full_conformal_predict(x)?, *y)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let summary = CutoffSummary {
        tau: a.tau,
        lambda: a.lambda,
        fixed_threshold: None,
        coverage: coverage(&rows),
        points: &rows,
    };
    Output::new(&summary, csv_table(&rows)?)
}

#[derive(Serialize)]
struct IntervalRow {
    index: usize,
    lower: f64,
    upper: f64,
    y: Option<f64>,
    covered: Option<bool>,
}

#[derive(Serialize)]
struct IntervalSummary<'a> {
    alpha: f64,
    coverage: Option<f64>,
    intervals: &'a [IntervalRow],
}

fn features(points: &[(Vec<f64>, Option<f64>)], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), d, |i, j| points[i].0[j])
}

pub fn cqr_cmd(a: &CqrArgs, solver: &SolverConfig) -> Res {
    open_unit("alpha", a.alpha)?;
    open_unit("split", a.split)?;
    let ds = load(&a.data)?;
    let points = test_points(&a.x, &a.test_csv, &a.data.response, ds.d())?;
    let iv = cqr_predict(&ds, a.alpha, a.split, a.seed, solver, &features(&points, ds.d()))?;
    let rows: Vec<IntervalRow> = iv
        .iter()
        .zip(&points)
        .enumerate()
        .map(|(index, (&(lower, upper), (_, y)))| IntervalRow {
            index,
            lower,
            upper,
            y: *y,
            covered: y.map(|y| lower <= y && y <= upper),
        })
        .collect();
    let flags: Option<Vec<bool>> = rows.iter().map(|r| r.covered).collect();
    let summary = IntervalSummary {
        alpha: a.alpha,
        coverage: flags.map(|f| f.iter().filter(|&&c| c).count() as f64 / f.len().max(1) as f64),
        intervals: &rows,
    };
    Output::new(&summary, csv_table(&rows)?)
}

fn parse_method(name: &str) -> Result<IntervalMethod, CliError> {
    IntervalMethod::parse(name).ok_or_else(|| {
        let known: Vec<&str> = IntervalMethod::ALL.iter().map(|m| m.name()).collect();
        CliError::Usage(format!("unknown method '{name}', expected one of {}", known.join(", ")))
    })
}

pub fn simulate_cmd(a: &SimulateArgs, solver: &SolverConfig) -> Res {
    open_unit("tau", a.tau)?;
    open_unit("alpha", a.alpha)?;
    let figure = Figure::parse(&a.figure)
        .ok_or_else(|| CliError::Usage(format!("unknown figure '{}', expected fig1 … fig7", a.figure)))?;
    let mut cfg = FigureConfig::defaults(figure);
    if let Some(ds) = &a.d {
        let n = a.n.unwrap_or(cfg.settings[0].n);
        cfg.settings = ds.iter().map(|&d| Setting { n, d }).collect();
    } else if let Some(n) = a.n {
        for s in &mut cfg.settings {
            s.n = n;
        }
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(m) = a.n_test {
        cfg.n_test = m;
    }
    if let Some(top) = a.lambda_top {
        cfg.lambda_top = top;
    }
    if let Some(ms) = &a.methods {
        cfg.methods = ms.iter().map(|m| parse_method(m)).collect::<Result<_, _>>()?;
    }
    cfg.seed = a.seed;
    cfg.tau = a.tau;
    cfg.alpha = a.alpha;
    cfg.sigma = a.sigma;
    let data = match (&a.csv, figure) {
        (Some(path), Figure::Fig7) => Some(Dataset::from_csv_path(path, &a.response)?),
        (None, Figure::Fig7) => return Err(CliError::Usage("fig7 needs --csv".into())),
        (Some(_), _) => return Err(CliError::Usage("--csv is only used by fig7".into())),
        _ => None,
    };
    let report = run_figure(&cfg, data.as_ref(), solver)?;
    let mut csv = Vec::new();
    report.write_rows_csv(&mut csv)?;
    Output::new(&report, csv)
}

#[derive(Serialize)]
struct QuantileEntry {
    level: f64,
    value: f64,
}

#[derive(Serialize)]
struct DualLawSummary {
    prob_nonpositive: f64,
    lower_edge: f64,
    lower_mass: f64,
    upper_mass: f64,
    quantiles: Vec<QuantileEntry>,
}

#[derive(Serialize)]
struct AsymptoticsSummary {
    gamma: f64,
    tau: f64,
    sigma: f64,
    lambda: f64,
    beta0_star: f64,
    m_u_star: f64,
    rho1_star: f64,
    m_eta_star: f64,
    rho2_star: f64,
    objective_value: f64,
    predicted_coverage: f64,
    degenerate: bool,
    dual_law: DualLawSummary,
}

pub fn asymptotics_cmd(a: &AsymptoticsArgs) -> Res {
    if let Some(l) = a.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(CliError::Usage(format!("quantile level {l} outside (0, 1)")));
    }
    let pb = AsymptoticProblem::new(a.gamma, a.tau, a.sigma)
        .with_lambda(a.lambda)
        .with_beta_second_moment(a.beta_second_moment);
    let sol = solve_asymptotic(&pb)?;
    let law = limiting_dual_law(&sol, &pb)?;
    let summary = AsymptoticsSummary {
        gamma: a.gamma,
        tau: a.tau,
        sigma: a.sigma,
        lambda: a.lambda,
        beta0_star: sol.beta0_star,
        m_u_star: sol.m_u_star,
        rho1_star: sol.rho1_star,
        m_eta_star: sol.m_eta_star,
        rho2_star: sol.rho2_star,
        objective_value: sol.objective_value,
        predicted_coverage: sol.predicted_coverage,
        degenerate: sol.degenerate,
        dual_law: DualLawSummary {
            prob_nonpositive: law.prob_nonpositive(),
            lower_edge: law.lower_edge(),
            lower_mass: law.lower_mass(),
            upper_mass: law.upper_mass(),
            quantiles: a
                .levels
                .iter()
                .map(|&level| QuantileEntry { level, value: law.quantile(level) })
                .collect(),
        },
    };
    let json = serde_json::to_value(&summary).map_err(qrcov::Error::from)?;
    let csv = csv_key_values(&json)?;
    Ok(Output { json, csv })
}

pub fn evaluate_cmd(a: &EvaluateArgs, solver: &SolverConfig) -> Res {
    let method = parse_method(&a.method)?;
    open_unit("alpha", a.alpha)?;
    open_unit("split", a.split)?;
    non_negative("lambda", a.lambda)?;
    non_negative("lambda-top", a.lambda_top)?;
    if !(a.c_lo < a.c_hi) {
        return Err(CliError::Usage("--c-lo must be below --c-hi".into()));
    }
    let train = load(&a.data)?;
    let test = Dataset::from_csv_path(&a.test_csv, &a.data.response)?;
    if test.d() != train.d() {
        return Err(data_error(format!("test data has {} features, training data has {}", test.d(), train.d())));
    }
    let options = IntervalOptions {
        lambda: a.lambda,
        lambda_grid: default_lambda_grid(train.n(), a.lambda_top),
        c_range: (a.c_lo, a.c_hi),
        split_fraction: a.split,
        seed: a.seed,
    };
    let iv = interval_predict(method, &train, a.alpha, solver, test.features(), &options)?;
    let report = evaluate(&iv, test.response().as_slice(), test.features(), a.alpha)?;
    let csv = csv_table(report.per_point.as_deref().unwrap_or_default())?;
    Output::new(&report, csv)
}
