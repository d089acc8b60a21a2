mod common;

use common::gaussian;
use qrcov::calibrate::*;
use qrcov::model::empirical_quantile;
use qrcov::{Dataset, SolverConfig};

#[test]
fn bai_examples() {
    let (v, clipped) = bai_level(0.9, 30, 300).unwrap();
    assert!((v - 0.85 / 0.9).abs() < 1e-15 && !clipped);
    // past 2(1 − τ) the corrected level leaves the unit interval
    assert_eq!(bai_level(0.9, 60, 200).unwrap(), (200.0 / 201.0, true));
    assert_eq!(bai_level(0.9, 0, 300).unwrap(), (0.9, false));
    let (v, clipped) = bai_level(0.5, 300, 300).unwrap();
    assert!((v - 1.0 / 301.0).abs() < 1e-15 && clipped);
}

/// Solve τ_adj − (τ_adj − ½)γ = τ by bisection and compare.
#[test]
fn bai_inverts_small_ratio_bias() {
    for &(tau, d, n) in &[(0.9, 10, 200), (0.8, 30, 400), (0.1, 5, 100), (0.95, 4, 500)] {
        let gamma = d as f64 / n as f64;
        let bias = |t: f64| t - (t - 0.5) * gamma - tau;
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bias(mid) < 0.0 { lo = mid } else { hi = mid }
        }
        let (v, clipped) = bai_level(tau, d, n).unwrap();
        assert!(!clipped && (v - lo).abs() < 1e-12, "{tau} {d} {n}: {v} vs {lo}");
    }
}

/// Limiting coverage of plain quantile regression at the corrected level
/// should be close to τ when d/n is small.
#[test]
fn bai_level_restores_limiting_coverage() {
    use qrcov::asymptotics::{solve_asymptotic, AsymptoticProblem};
    let gamma = 0.05;
    let (level, _) = bai_level(0.9, 50, 1000).unwrap();
    let plain = solve_asymptotic(&AsymptoticProblem::new(gamma, 0.9, 1.0)).unwrap();
    let adjusted = solve_asymptotic(&AsymptoticProblem::new(gamma, level, 1.0)).unwrap();
    assert!(plain.predicted_coverage < 0.885, "{}", plain.predicted_coverage);
    assert!((adjusted.predicted_coverage - 0.9).abs() < 0.005, "{}", adjusted.predicted_coverage);
}

#[test]
fn singleton_grid_reduces_to_plain_search() {
    let (ds, _) = gaussian(80, 8, 2);
    let cfg = SolverConfig::default();
    let plain = calibrate_level(&ds, 0.9, 0.0, &cfg).unwrap();
    let ridge = calibrate_level_ridge(&ds, 0.9, &[0.0], &cfg).unwrap();
    assert_eq!(plain.tau_adj, ridge.tau_adj);
    assert_eq!(plain.loo_coverage, ridge.loo_coverage);
    let plain = calibrate_additive(&ds, 0.9, 0.0, DEFAULT_C_RANGE, &cfg).unwrap();
    let ridge = calibrate_additive_ridge(&ds, 0.9, &[0.0], DEFAULT_C_RANGE, &cfg).unwrap();
    assert_eq!(plain.c, ridge.c);
    assert_eq!(plain.loo_coverage, ridge.loo_coverage);
}

#[test]
fn chosen_lambda_minimizes_multiaccuracy_trace() {
    let (ds, _) = gaussian(100, 20, 6);
    let grid = default_lambda_grid(100, 0.05);
    let r = calibrate_level_ridge(&ds, 0.9, &grid, &SolverConfig::default()).unwrap();
    if r.flags.contains(&CalibrationFlag::EmptyToleranceSet) {
        return;
    }
    let best = r.multiaccuracy_trace.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    assert_eq!(r.loo_multiaccuracy, Some(best));
    assert!(r.within_tolerance(0.9));
}

#[test]
fn search_trace_best_gap_is_non_increasing() {
    let (ds, _) = gaussian(150, 30, 3);
    let r = calibrate_level(&ds, 0.9, 0.0, &SolverConfig::default()).unwrap();
    let mut best = f64::INFINITY;
    let mut bests = Vec::new();
    for &(_, cov) in &r.search_trace {
        best = best.min((cov - 0.9).abs());
        bests.push(best);
    }
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    assert!(((r.loo_coverage - 0.9).abs() - best).abs() < 1e-15);
}

#[test]
fn offset_only_additive_is_the_quantile() {
    let y: Vec<f64> = (0..41).map(|i| ((i * 37) % 41) as f64 / 7.0 - 3.0).collect();
    let ds = Dataset::intercept_only(&y).unwrap();
    let r = calibrate_additive(&ds, 0.5, 0.0, DEFAULT_C_RANGE, &SolverConfig::default()).unwrap();
    let med = empirical_quantile(0.5, &y).unwrap();
    assert!(r.within_tolerance(0.5));
    // any c in the gap around the median gives the same LOO coverage
    assert!((r.c.unwrap() - med).abs() <= 1.0 / 7.0 + 1e-9, "{:?} vs {med}", r.c);
}

#[test]
fn offset_only_level_recovers_quantile() {
    let y: Vec<f64> = (0..50).map(|i| ((i * 13) % 50) as f64).collect();
    let ds = Dataset::intercept_only(&y).unwrap();
    let r = calibrate_level(&ds, 0.8, 0.0, &SolverConfig::default()).unwrap();
    assert!(r.within_tolerance(0.8));
    let q = empirical_quantile(0.8, &y).unwrap();
    assert!((r.final_fit.intercept_or_offset - q).abs() <= 1.0 + 1e-9);
}

#[test]
fn tiny_dimension_needs_little_correction() {
    let (ds, _) = gaussian(300, 1, 12);
    let r = calibrate_level(&ds, 0.9, 0.0, &SolverConfig::default()).unwrap();
    assert!((r.tau_adj.unwrap() - 0.9).abs() <= 0.02, "{:?}", r.tau_adj);
}

#[test]
fn additive_finds_target_at_small_ratio() {
    let (ds, _) = gaussian(200, 20, 8);
    let r = calibrate_additive(&ds, 0.9, 0.0, DEFAULT_C_RANGE, &SolverConfig::default()).unwrap();
    assert!(r.within_tolerance(0.9) && !r.is_saturated());
}

#[test]
fn regularization_only_reaches_target() {
    let (ds, _) = gaussian(100, 20, 4);
    let grid = default_lambda_grid(100, 0.1);
    let r = calibrate_regularization(&ds, 0.9, &grid, &SolverConfig::default()).unwrap();
    assert!(r.loo_coverage >= 0.9 - 0.01 - 1e-12 || r.lambda == grid.last().copied());
}

#[test]
fn invalid_inputs() {
    let (ds, _) = gaussian(20, 2, 1);
    let cfg = SolverConfig::default();
    assert!(calibrate_additive(&ds, 0.9, 0.0, (1.0, -1.0), &cfg).is_err());
    assert!(calibrate_level(&ds, 1.2, 0.0, &cfg).is_err());
    assert!(calibrate_level_ridge(&ds, 0.9, &[], &cfg).is_err());
}

/// At d/n = 0.3 the offset search runs out of room; the result must sit on
/// the range end even when an interior probe ties it on coverage.
#[test]
fn saturated_additive_reports_range_end() {
    let (ds, _) = gaussian(200, 60, 401);
    let r = calibrate_additive(&ds, 0.9, 0.0, (-10.0, 10.0), &SolverConfig::default()).unwrap();
    assert!(r.flags.contains(&CalibrationFlag::SaturatedUpper));
    assert_eq!(r.c, Some(10.0));
    assert!(r.loo_coverage < 0.9);
}
