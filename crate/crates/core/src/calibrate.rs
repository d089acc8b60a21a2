//! Coverage calibration by leave-one-out dual signs: level adjustment,
//! additive (offset) adjustment, their joint searches with the ridge level,
//! and the closed-form level correction for small aspect ratios.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loo::{loo_coverage_dual, loo_multiaccuracy};
use crate::model::{Dataset, FitResult, ProblemSpec};
use crate::solver::{fit, SolverConfig};

pub const MAX_BISECTIONS: usize = 30;
pub const DEFAULT_C_RANGE: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationMethod {
    LevelAdjust,
    LevelRidge,
    AdditiveAdjust,
    AdditiveRidge,
    BaiClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationFlag {
    /// The search reached the upper end of its range and still undercovers.
    SaturatedUpper,
    /// The search reached the lower end of its range and still overcovers.
    SaturatedLower,
    /// No λ on the grid met the 1/n tolerance; the smallest gap was used.
    EmptyToleranceSet,
    /// The closed-form level left (0, 1) and was clipped.
    Clipped,
    /// A grid point failed and was skipped.
    GridPointFailed { lambda: f64, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    pub tau_adj: Option<f64>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub final_fit: FitResult,
    pub loo_coverage: f64,
    pub loo_multiaccuracy: Option<f64>,
    /// (searched parameter, LOO coverage) in probe order. For the ridge
    /// variants the parameter is λ and the coverage is that of its inner search.
    pub search_trace: Vec<(f64, f64)>,
    /// (λ, LOO multiaccuracy) over the grid points inside the tolerance set.
    pub multiaccuracy_trace: Vec<(f64, f64)>,
    pub flags: Vec<CalibrationFlag>,
}

impl CalibrationResult {
    pub fn within_tolerance(&self, tau: f64) -> bool {
        let n = self.final_fit.n() as f64;
        (self.loo_coverage - tau).abs() <= 1.0 / n + 1e-12
    }

    pub fn is_saturated(&self) -> bool {
        self.flags
            .iter()
            .any(|f| matches!(f, CalibrationFlag::SaturatedUpper | CalibrationFlag::SaturatedLower))
    }
}

/// (τ − d/2n) / (1 − d/n), clipped into [1/(n+1), 1 − 1/(n+1)].
/// Inverts the small-ratio bias P(Y ≤ q̂_τ) ≈ τ − (τ − ½)·d/n. The boolean
/// reports whether clipping happened.
pub fn bai_level(tau: f64, d: usize, n: usize) -> Result<(f64, bool)> {
    if !(tau > 0.0 && tau < 1.0) || n == 0 {
        return Err(Error::domain("bai_level needs 0 < tau < 1 and n >= 1"));
    }
    let gamma = d as f64 / n as f64;
    let raw = if gamma < 1.0 { (tau - 0.5 * gamma) / (1.0 - gamma) } else { f64::NAN };
    let lo = 1.0 / (n as f64 + 1.0);
    let hi = 1.0 - lo;
    if raw.is_finite() && raw >= lo && raw <= hi {
        Ok((raw, false))
    } else if raw > hi || (raw.is_nan() && tau > 0.5) {
        Ok((hi, true))
    } else {
        Ok((lo, true))
    }
}

struct Probe {
    param: f64,
    coverage: f64,
    fit: FitResult,
}

struct Search {
    best: Probe,
    trace: Vec<(f64, f64)>,
    flags: Vec<CalibrationFlag>,
}

/// Bisection for a parameter whose LOO coverage is (typically) increasing.
/// Keeps the probe with the smallest |coverage − τ|, so a non-monotone
/// coverage curve degrades the search rather than breaking it. A saturated
/// search returns the range end, the largest adjustment available.
fn search<F>(lo: f64, hi: f64, first: f64, tau: f64, n: usize, mut eval: F) -> Result<Search>
where
    F: FnMut(f64, Option<&FitResult>) -> Result<FitResult>,
{
    let tol = 1.0 / n as f64;
    let mut trace = Vec::new();
    let mut best: Option<Probe> = None;
    let mut last: Option<FitResult> = None;
    let mut probe = |param: f64, best: &mut Option<Probe>, last: &mut Option<FitResult>| -> Result<f64> {
        let fit = eval(param, last.as_ref())?;
        let coverage = loo_coverage_dual(&fit).coverage;
        trace.push((param, coverage));
        let gap = (coverage - tau).abs();
        if best.as_ref().map_or(true, |b| gap < (b.coverage - tau).abs()) {
            *best = Some(Probe { param, coverage, fit: fit.clone() });
        }
        *last = Some(fit);
        Ok(coverage)
    };
    let done = |c: f64| (c - tau).abs() <= tol + 1e-12;

    let mut flags = Vec::new();
    let c0 = probe(first, &mut best, &mut last)?;
    let (mut a, mut b) = (lo, hi);
    if !done(c0) {
        if c0 < tau {
            let c_hi = probe(hi, &mut best, &mut last)?;
            if c_hi < tau - tol - 1e-12 {
                flags.push(CalibrationFlag::SaturatedUpper);
                best = last.clone().map(|fit| Probe { param: hi, coverage: c_hi, fit });
            }
            a = first;
        } else {
            let c_lo = probe(lo, &mut best, &mut last)?;
            if c_lo > tau + tol + 1e-12 {
                flags.push(CalibrationFlag::SaturatedLower);
                best = last.clone().map(|fit| Probe { param: lo, coverage: c_lo, fit });
            }
            b = first;
        }
        let settled = best.as_ref().is_some_and(|p| done(p.coverage));
        if flags.is_empty() && !settled {
            for _ in 0..MAX_BISECTIONS {
                let mid = 0.5 * (a + b);
                let c = probe(mid, &mut best, &mut last)?;
                if done(c) {
                    break;
                }
                if c < tau {
                    a = mid;
                } else {
                    b = mid;
                }
            }
        }
    }
    Ok(Search {
        best: best.expect("at least one probe"),
        trace,
        flags,
    })
}

fn warm(config: &SolverConfig, last: Option<&FitResult>) -> SolverConfig {
    match last {
        Some(f) => config.with_warm_start(f.clone()),
        None => config.cold(),
    }
}

fn finish(
    method: CalibrationMethod,
    s: Search,
    dataset: &Dataset,
    tau: f64,
    lambda: f64,
    level: bool,
) -> CalibrationResult {
    let multiaccuracy = loo_multiaccuracy(&s.best.fit, dataset, tau).ok();
    CalibrationResult {
        method,
        tau_adj: level.then_some(s.best.param),
        c: (!level).then_some(s.best.param),
        lambda: Some(lambda),
        loo_coverage: s.best.coverage,
        loo_multiaccuracy: multiaccuracy,
        final_fit: s.best.fit,
        search_trace: s.trace,
        multiaccuracy_trace: Vec::new(),
        flags: s.flags,
    }
}

fn check_inputs(dataset: &Dataset, tau: f64, lambda: f64) -> Result<()> {
    if dataset.n() < 2 {
        return Err(Error::domain("calibration needs at least two samples"));
    }
    ProblemSpec::new(tau, lambda).map(|_| ())
}

/// Searches τ-adj ∈ [1/(n+1), 1 − 1/(n+1)] for LOO coverage within 1/n of τ.
pub fn calibrate_level(
    dataset: &Dataset,
    tau: f64,
    lambda: f64,
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    check_inputs(dataset, tau, lambda)?;
    let n = dataset.n();
    let lo = 1.0 / (n as f64 + 1.0);
    let hi = 1.0 - lo;
    let base = ProblemSpec::new(tau, lambda)?;
    let s = search(lo, hi, tau.clamp(lo, hi), tau, n, |t, last| {
        fit(dataset, &base.with_tau(t), &warm(config, last))
    })?;
    Ok(finish(CalibrationMethod::LevelAdjust, s, dataset, tau, lambda, true))
}

/// Searches the fixed offset c of an intercept-less fit at level τ.
pub fn calibrate_additive(
    dataset: &Dataset,
    tau: f64,
    lambda: f64,
    c_range: (f64, f64),
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    check_inputs(dataset, tau, lambda)?;
    let (lo, hi) = c_range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!("invalid offset range [{lo}, {hi}]")));
    }
    let n = dataset.n();
    let start = crate::model::empirical_quantile(tau, dataset.response().as_slice())?.clamp(lo, hi);
    let base = ProblemSpec::new(tau, lambda)?;
    let s = search(lo, hi, start, tau, n, |c, last| {
        fit(dataset, &base.with_offset(c), &warm(config, last))
    })?;
    Ok(finish(CalibrationMethod::AdditiveAdjust, s, dataset, tau, lambda, false))
}

/// Default ridge grid: n·{0, 0.005, …, top}.
pub fn default_lambda_grid(n: usize, top: f64) -> Vec<f64> {
    let steps = (top / 0.005).round() as usize;
    (0..=steps).map(|k| n as f64 * 0.005 * k as f64).collect()
}

fn ridge<F>(
    method: CalibrationMethod,
    tau: f64,
    lambda_grid: &[f64],
    inner: F,
) -> Result<CalibrationResult>
where
    F: Fn(f64) -> Result<CalibrationResult> + Sync,
{
    if lambda_grid.is_empty() {
        return Err(Error::domain("lambda grid is empty"));
    }
    let runs: Vec<(f64, Result<CalibrationResult>)> =
        lambda_grid.par_iter().map(|&l| (l, inner(l))).collect();
    let mut flags = Vec::new();
    let mut ok = Vec::new();
    let mut first_error = None;
    for (lambda, run) in runs {
        match run {
            Ok(r) => ok.push(r),
            Err(e) => {
                warn!("calibration at lambda={lambda} failed: {e}");
                flags.push(CalibrationFlag::GridPointFailed { lambda, message: e.to_string() });
                first_error.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_error.expect("grid is non-empty"));
    }
    let search_trace: Vec<(f64, f64)> = ok.iter().map(|r| (r.lambda.unwrap_or(0.0), r.loo_coverage)).collect();
    let members: Vec<&CalibrationResult> = ok.iter().filter(|r| r.within_tolerance(tau)).collect();
    let multiaccuracy_trace: Vec<(f64, f64)> = members
        .iter()
        .filter_map(|r| Some((r.lambda?, r.loo_multiaccuracy?)))
        .collect();
    let chosen = if members.is_empty() {
        flags.push(CalibrationFlag::EmptyToleranceSet);
        ok.iter()
            .min_by(|a, b| (a.loo_coverage - tau).abs().total_cmp(&(b.loo_coverage - tau).abs()))
            .expect("non-empty")
    } else {
        members
            .iter()
            .copied()
            .min_by(|a, b| {
                let ma = a.loo_multiaccuracy.unwrap_or(f64::INFINITY);
                let mb = b.loo_multiaccuracy.unwrap_or(f64::INFINITY);
                ma.total_cmp(&mb)
            })
            .expect("non-empty")
    };
    let mut result = chosen.clone();
    result.method = method;
    result.flags.extend(flags);
    result.search_trace = search_trace;
    result.multiaccuracy_trace = multiaccuracy_trace;
    Ok(result)
}

/// Level search per grid λ, then the λ with smallest LOO multiaccuracy among
/// those meeting the 1/n tolerance.
pub fn calibrate_level_ridge(
    dataset: &Dataset,
    tau: f64,
    lambda_grid: &[f64],
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    ridge(CalibrationMethod::LevelRidge, tau, lambda_grid, |l| {
        calibrate_level(dataset, tau, l, config)
    })
}

pub fn calibrate_additive_ridge(
    dataset: &Dataset,
    tau: f64,
    lambda_grid: &[f64],
    c_range: (f64, f64),
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    ridge(CalibrationMethod::AdditiveRidge, tau, lambda_grid, |l| {
        calibrate_additive(dataset, tau, l, c_range, config)
    })
}

/// Fits at the closed-form adjusted level.
pub fn calibrate_bai(
    dataset: &Dataset,
    tau: f64,
    lambda: f64,
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    check_inputs(dataset, tau, lambda)?;
    let (level, clipped) = bai_level(tau, dataset.d(), dataset.n())?;
    let f = fit(dataset, &ProblemSpec::new(level, lambda)?, config)?;
    let coverage = loo_coverage_dual(&f).coverage;
    Ok(CalibrationResult {
        method: CalibrationMethod::BaiClosedForm,
        tau_adj: Some(level),
        c: None,
        lambda: Some(lambda),
        loo_multiaccuracy: loo_multiaccuracy(&f, dataset, tau).ok(),
        final_fit: f,
        loo_coverage: coverage,
        search_trace: vec![(level, coverage)],
        multiaccuracy_trace: Vec::new(),
        flags: if clipped { vec![CalibrationFlag::Clipped] } else { Vec::new() },
    })
}

/// Tuning λ alone at the nominal level: the smallest grid λ whose LOO
/// coverage reaches τ − 1/n. Falls back to the largest λ, flagged.
pub fn calibrate_regularization(
    dataset: &Dataset,
    tau: f64,
    lambda_grid: &[f64],
    config: &SolverConfig,
) -> Result<CalibrationResult> {
    if lambda_grid.is_empty() {
        return Err(Error::domain("lambda grid is empty"));
    }
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let target = tau - 1.0 / dataset.n() as f64 - 1e-12;
    let mut trace = Vec::new();
    let mut last: Option<FitResult> = None;
    for (k, &l) in grid.iter().enumerate() {
        let f = fit(dataset, &ProblemSpec::new(tau, l)?, &warm(config, last.as_ref()))?;
        let coverage = loo_coverage_dual(&f).coverage;
        trace.push((l, coverage));
        let final_point = k + 1 == grid.len();
        if coverage >= target || final_point {
            return Ok(CalibrationResult {
                method: CalibrationMethod::LevelAdjust,
                tau_adj: Some(tau),
                c: None,
                lambda: Some(l),
                loo_multiaccuracy: loo_multiaccuracy(&f, dataset, tau).ok(),
                final_fit: f,
                loo_coverage: coverage,
                search_trace: trace,
                multiaccuracy_trace: Vec::new(),
                flags: if coverage >= target { Vec::new() } else { vec![CalibrationFlag::SaturatedUpper] },
            });
        }
        last = Some(f);
    }
    unreachable!("loop returns on the last grid point")
}
