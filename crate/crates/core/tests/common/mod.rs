#![allow(dead_code)]

use nalgebra::DVector;
use qrcov::experiments::{generate, SimConfig};
use qrcov::solver::pinball_loss;
use qrcov::{Dataset, FitResult, InterceptMode, ProblemSpec};

pub fn gaussian(n: usize, d: usize, seed: u64) -> (Dataset, DVector<f64>) {
    let draw = generate(&SimConfig::gaussian(n, d, 1, 0.9, 1, seed), 0).unwrap();
    (draw.train, draw.beta_true)
}

pub fn gaussian_with_test(n: usize, d: usize, n_test: usize, seed: u64) -> (Dataset, Dataset, DVector<f64>) {
    let draw = generate(&SimConfig::gaussian(n, d, n_test, 0.9, 1, seed), 0).unwrap();
    (draw.train, draw.test, draw.beta_true)
}

pub fn primal(fit: &FitResult, spec: &ProblemSpec) -> f64 {
    fit.residuals.iter().map(|&r| pinball_loss(r, spec.tau)).sum::<f64>() + spec.lambda * fit.beta.norm_squared()
}

pub fn spec_of(fit: &FitResult) -> ProblemSpec {
    ProblemSpec {
        tau: fit.tau,
        lambda: fit.lambda,
        intercept_mode: fit.intercept_mode,
        jitter: 0.0,
    }
}

/// Checks the optimality conditions from the fit's own vectors, without
/// trusting the solver's certificate. Returns the first violation.
pub fn kkt_violation(ds: &Dataset, spec: &ProblemSpec, fit: &FitResult, tol: f64) -> Option<String> {
    let tau = spec.tau;
    let n = ds.n() as f64;
    let x = ds.features();
    let y = ds.response();
    let offset = fit.intercept_or_offset;
    let fitted = x * &fit.beta;
    let yscale = ds.response_scale().max(1.0);
    let band = 1e-6 * yscale;
    for i in 0..ds.n() {
        let r = y[i] - offset - fitted[i];
        if (r - fit.residuals[i]).abs() > tol * yscale {
            return Some(format!("residual {i} inconsistent"));
        }
        let e = fit.duals[i];
        if e < -(1.0 - tau) - tol || e > tau + tol {
            return Some(format!("dual {i}={e} outside box"));
        }
        if (r > band && (e - tau).abs() > 1e-6) || (r < -band && (e + 1.0 - tau).abs() > 1e-6) {
            return Some(format!("sample {i}: r={r} but eta={e}"));
        }
    }
    let colscale = x.column_iter().map(|c| c.abs().sum()).fold(1.0, f64::max);
    let station = x.tr_mul(&fit.duals) - &fit.beta * (2.0 * spec.lambda);
    if station.amax() > 1e-6 * colscale {
        return Some(format!("stationarity {}", station.amax()));
    }
    if matches!(spec.intercept_mode, InterceptMode::FreeIntercept) && fit.duals.sum().abs() > 1e-6 * n {
        return Some(format!("duals sum {}", fit.duals.sum()));
    }
    let shifted = y.map(|v| v - if spec.has_free_intercept() { 0.0 } else { offset });
    let xt_eta = x.tr_mul(&fit.duals);
    let penalty_part = if spec.lambda > 0.0 { xt_eta.norm_squared() / (4.0 * spec.lambda) } else { 0.0 };
    let dual = fit.duals.dot(&shifted) - penalty_part;
    let gap = (primal(fit, spec) - dual) / n;
    if gap.abs() > 1e-6 * yscale {
        return Some(format!("gap per sample {gap}"));
    }
    None
}

pub fn assert_kkt(ds: &Dataset, spec: &ProblemSpec, fit: &FitResult, tol: f64) {
    if let Some(v) = kkt_violation(ds, spec, fit, tol) {
        panic!("{v}");
    }
}
