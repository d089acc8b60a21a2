//! Two-sided intervals from each method, the split-conformal baseline, and
//! the evaluation metrics (coverage, median length, multiaccuracy).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{calibrate_additive_ridge, calibrate_level_ridge, CalibrationResult};
use crate::conformal::DualThresholdPredictor;
use crate::error::{Error, Result};
use crate::loo::column_multiaccuracy;
use crate::model::{Dataset, FitResult, ProblemSpec};
use crate::solver::{fit, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntervalMethod {
    QR,
    CQR,
    GCCRand,
    FixedThresh,
    LevelRidge,
    AdditiveRidge,
}

impl IntervalMethod {
    pub const ALL: [IntervalMethod; 6] = [
        IntervalMethod::QR,
        IntervalMethod::CQR,
        IntervalMethod::GCCRand,
        IntervalMethod::FixedThresh,
        IntervalMethod::LevelRidge,
        IntervalMethod::AdditiveRidge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            IntervalMethod::QR => "qr",
            IntervalMethod::CQR => "cqr",
            IntervalMethod::GCCRand => "gcc-rand",
            IntervalMethod::FixedThresh => "fixed-thresh",
            IntervalMethod::LevelRidge => "level-ridge",
            IntervalMethod::AdditiveRidge => "additive-ridge",
        }
    }

    pub fn parse(s: &str) -> Option<IntervalMethod> {
        IntervalMethod::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Knobs shared by the interval methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalOptions {
    /// Ridge level for QR, CQR and the dual-threshold methods.
    pub lambda: f64,
    /// λ grid for the ridge calibrators (absolute values).
    pub lambda_grid: Vec<f64>,
    pub c_range: (f64, f64),
    pub split_fraction: f64,
    /// Seeds the CQR split and the GCC draws of U.
    pub seed: u64,
}

impl IntervalOptions {
    pub fn for_n(n: usize) -> IntervalOptions {
        IntervalOptions {
            lambda: 0.0,
            lambda_grid: crate::calibrate::default_lambda_grid(n, 0.1),
            c_range: crate::calibrate::DEFAULT_C_RANGE,
            split_fraction: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointDetail {
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalReport {
    pub coverage: f64,
    pub median_length: f64,
    pub multiaccuracy: f64,
    pub per_point: Option<Vec<PointDetail>>,
}

fn predict_fit(fit: &FitResult, x: &DMatrix<f64>) -> Vec<f64> {
    fit.predict_rows(x).iter().copied().collect()
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn one_side_threshold(
    dataset: &Dataset,
    level: f64,
    lambda: f64,
    config: &SolverConfig,
    x_test: &DMatrix<f64>,
    u_draws: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let spec = ProblemSpec::new(level, lambda)?;
    let predictor = DualThresholdPredictor::new(dataset, &spec, config)?;
    let t_hat = predictor.fixed_threshold()?;
    rows(x_test)
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let cutoff = match u_draws {
                Some(u) => predictor.randomized_gcc_predict(x, u[i])?,
                None => predictor.quantile_dual_threshold(x, t_hat)?,
            };
            Ok(cutoff.value)
        })
        .collect()
}

fn draw_u(rng: &mut ChaCha8Rng, tau: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|_| {
            // open interval (−(1−τ), τ)
            loop {
                let u = rng.random_range(-(1.0 - tau)..tau);
                if u > -(1.0 - tau) {
                    return u;
                }
            }
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Two-sided intervals with each side computed independently at α/2 and
/// 1 − α/2.
pub fn interval_predict(
    method: IntervalMethod,
    dataset: &Dataset,
    alpha: f64,
    config: &SolverConfig,
    x_test: &DMatrix<f64>,
    options: &IntervalOptions,
) -> Result<Vec<(f64, f64)>> {
    check_alpha(alpha)?;
    if x_test.ncols() != dataset.d() {
        return Err(Error::domain("test features have the wrong number of columns"));
    }
    let lo_level = alpha / 2.0;
    let hi_level = 1.0 - alpha / 2.0;
    let m = x_test.nrows();
    let (lower, upper) = match method {
        IntervalMethod::QR => {
            let lo = fit(dataset, &ProblemSpec::new(lo_level, options.lambda)?, config)?;
            let hi = fit(dataset, &ProblemSpec::new(hi_level, options.lambda)?, config)?;
            (predict_fit(&lo, x_test), predict_fit(&hi, x_test))
        }
        IntervalMethod::CQR => {
            return cqr_predict(dataset, alpha, options.split_fraction, options.seed, config, x_test);
        }
        IntervalMethod::FixedThresh => (
            one_side_threshold(dataset, lo_level, options.lambda, config, x_test, None)?,
            one_side_threshold(dataset, hi_level, options.lambda, config, x_test, None)?,
        ),
        IntervalMethod::GCCRand => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let u_lo = draw_u(&mut rng, lo_level, m);
            let u_hi = draw_u(&mut rng, hi_level, m);
            (
                one_side_threshold(dataset, lo_level, options.lambda, config, x_test, Some(&u_lo))?,
                one_side_threshold(dataset, hi_level, options.lambda, config, x_test, Some(&u_hi))?,
            )
        }
        IntervalMethod::LevelRidge | IntervalMethod::AdditiveRidge => {
            let side = |level: f64| -> Result<CalibrationResult> {
                if method == IntervalMethod::LevelRidge {
                    calibrate_level_ridge(dataset, level, &options.lambda_grid, config)
                } else {
                    calibrate_additive_ridge(dataset, level, &options.lambda_grid, options.c_range, config)
                }
            };
            let lo = side(lo_level)?;
            let hi = side(hi_level)?;
            (predict_fit(&lo.final_fit, x_test), predict_fit(&hi.final_fit, x_test))
        }
    };
    Ok(lower.into_iter().zip(upper).collect())
}

/// Split-conformal QR: fit both sides on a proper-training fold, inflate by
/// the ⌈(1−α)(n₂+1)⌉-th smallest calibration score.
pub fn cqr_predict(
    dataset: &Dataset,
    alpha: f64,
    split_fraction: f64,
    seed: u64,
    config: &SolverConfig,
    x_test: &DMatrix<f64>,
) -> Result<Vec<(f64, f64)>> {
    check_alpha(alpha)?;
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::domain("split_fraction must lie in (0,1)"));
    }
    let n = dataset.n();
    let n1 = ((split_fraction * n as f64).round() as usize).clamp(1, n);
    if n1 >= n {
        return Err(Error::domain("calibration fold is empty"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = dataset.select_rows(&order[..n1]);
    let calib = dataset.select_rows(&order[n1..]);
    let lo = fit(&train, &ProblemSpec::new(alpha / 2.0, 0.0)?, config)?;
    let hi = fit(&train, &ProblemSpec::new(1.0 - alpha / 2.0, 0.0)?, config)?;
    let lo_c = predict_fit(&lo, calib.features());
    let hi_c = predict_fit(&hi, calib.features());
    let mut scores: Vec<f64> = (0..calib.n())
        .map(|i| {
            let y = calib.response()[i];
            (lo_c[i] - y).max(y - hi_c[i])
        })
        .collect();
    scores.sort_by(f64::total_cmp);
    let n2 = scores.len();
    let k = ((1.0 - alpha) * (n2 as f64 + 1.0) - 1e-9).ceil() as usize;
    let q = if k > n2 { f64::INFINITY } else { scores[k.max(1) - 1] };
    let lo_t = predict_fit(&lo, x_test);
    let hi_t = predict_fit(&hi, x_test);
    Ok(lo_t.into_iter().zip(hi_t).map(|(l, h)| (l - q, h + q)).collect())
}

/// Coverage, median clipped width and test-set multiaccuracy
/// max_j |mean(X_j (covered − (1−α)))| / mean|X_j|.
pub fn evaluate(
    intervals: &[(f64, f64)],
    y_test: &[f64],
    x_test: &DMatrix<f64>,
    alpha: f64,
) -> Result<IntervalReport> {
    check_alpha(alpha)?;
    let m = intervals.len();
    if m == 0 || y_test.len() != m || x_test.nrows() != m {
        return Err(Error::domain("intervals, responses and features must have equal non-zero length"));
    }
    let details: Vec<PointDetail> = intervals
        .iter()
        .zip(y_test)
        .map(|(&(lower, upper), &y)| PointDetail {
            lower,
            upper,
            covered: lower <= y && y <= upper,
        })
        .collect();
    let covered = details.iter().filter(|p| p.covered).count();
    let mut widths: Vec<f64> = intervals.iter().map(|&(l, u)| (u - l).max(0.0)).collect();
    widths.sort_by(f64::total_cmp);
    let median_length = if m % 2 == 1 {
        widths[m / 2]
    } else {
        0.5 * (widths[m / 2 - 1] + widths[m / 2])
    };
    let weights: Vec<f64> = details
        .iter()
        .map(|p| if p.covered { 1.0 } else { 0.0 } - (1.0 - alpha))
        .collect();
    Ok(IntervalReport {
        coverage: covered as f64 / m as f64,
        median_length,
        multiaccuracy: column_multiaccuracy(x_test, &weights)?,
        per_point: Some(details),
    })
}
