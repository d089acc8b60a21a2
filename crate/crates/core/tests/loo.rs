mod common;

use common::{gaussian, gaussian_with_test};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qrcov::loo::{loo_coverage_bruteforce, loo_coverage_dual, loo_multiaccuracy, EPS_SIGN};
use qrcov::{fit, Dataset, ProblemSpec, SolverConfig};

#[test]
fn three_point_fixture() {
    let ds = Dataset::intercept_only(&[1.0, 2.0, 3.0]).unwrap();
    let spec = ProblemSpec::new(0.5, 0.0).unwrap();
    let f = fit(&ds, &spec, &SolverConfig::default()).unwrap();
    let dual = loo_coverage_dual(&f);
    assert_eq!(dual.covered_count(), 2);
    assert_eq!(dual.tie_count, 1);
    let brute = loo_coverage_bruteforce(&ds, &spec, &SolverConfig::default()).unwrap();
    // leaving out 1 or 3 gives medians 2.5 and 1.5; the middle point is ambiguous
    assert_eq!(brute.per_sample_tie, vec![false, true, false]);
    assert!(brute.per_sample_covered[0]);
    assert!(!brute.per_sample_covered[2]);
}

#[test]
fn ridge_equality_on_gaussian_sim() {
    let (ds, _) = gaussian(40, 8, 17);
    let spec = ProblemSpec::new(0.9, 0.05 * 40.0).unwrap();
    let cfg = SolverConfig::default();
    let dual = loo_coverage_dual(&fit(&ds, &spec, &cfg).unwrap());
    let brute = loo_coverage_bruteforce(&ds, &spec, &cfg).unwrap();
    assert_eq!(dual.per_sample_covered, brute.per_sample_covered);
}

#[test]
fn duplicated_row_is_a_tie() {
    let (ds, _) = gaussian(25, 3, 5);
    let x = ds.row(4);
    let dup = ds.with_row(x.as_slice(), ds.response()[4]).unwrap();
    let spec = ProblemSpec::new(0.5, 1.0).unwrap();
    let f = fit(&dup, &spec, &SolverConfig::default()).unwrap();
    let brute = loo_coverage_bruteforce(&dup, &spec, &SolverConfig::default()).unwrap();
    // the twin survives when one copy is dropped; if the pair sits on the fit
    // the omitted copy is interpolated
    if f.residuals[4].abs() <= 1e-9 * dup.response_scale() {
        assert!(brute.per_sample_tie[4] && brute.per_sample_tie[25]);
    }
}

#[test]
fn multiaccuracy_examples() {
    let ones = DMatrix::from_element(10, 1, 1.0);
    let y = DVector::from_fn(10, |i, _| i as f64);
    let ds = Dataset::new(ones, y).unwrap();
    let mut f = fit(&ds, &ProblemSpec::new(0.9, 0.0).unwrap().with_offset(0.0), &SolverConfig::default()).unwrap();
    f.duals = DVector::from_element(10, -0.1);
    assert!((loo_multiaccuracy(&f, &ds, 0.9).unwrap() - 0.1).abs() < 1e-12);
    // 9 of 10 covered at τ = 0.9 on a constant column
    f.duals[0] = 0.9;
    assert!(loo_multiaccuracy(&f, &ds, 0.9).unwrap().abs() < 1e-12);
    let zeros = Dataset::new(DMatrix::zeros(10, 2), DVector::from_element(10, 1.0)).unwrap();
    assert!(loo_multiaccuracy(&f, &zeros, 0.9).is_err());
}

#[test]
fn loo_multiaccuracy_tracks_test_set_estimate() {
    let (train, test, _) = gaussian_with_test(200, 20, 2000, 4);
    let spec = ProblemSpec::new(0.9, 0.0).unwrap();
    let f = fit(&train, &spec, &SolverConfig::default()).unwrap();
    let loo = loo_multiaccuracy(&f, &train, 0.9).unwrap();
    let pred = f.predict_rows(test.features());
    let x = test.features();
    let m = test.n() as f64;
    let test_ma = (0..20)
        .map(|j| {
            let num: f64 = (0..test.n())
                .map(|i| x[(i, j)] * ((test.response()[i] <= pred[i]) as u8 as f64 - 0.9))
                .sum::<f64>()
                / m;
            let den: f64 = x.column(j).abs().sum() / m;
            num.abs() / den
        })
        .fold(0.0, f64::max);
    // both are maxima of 20 noisy column averages: the LOO one over n=200,
    // the test one over 2000 points, so only their scale is comparable
    assert!(loo < 0.15 && test_ma < 0.1, "loo {loo}, test {test_ma}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Strict brute-force covers ≤ #{η ≤ 0} and #{η < 0} ≤ weak covers.
    #[test]
    fn sandwich_holds(seed in 0u64..10_000, tau in 0.2f64..0.9) {
        let (ds, _) = gaussian(25, 3, seed);
        let spec = ProblemSpec::new(tau, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let f = fit(&ds, &spec, &cfg).unwrap();
        let brute = loo_coverage_bruteforce(&ds, &spec, &cfg).unwrap();
        let nonpos = f.duals.iter().filter(|&&e| e <= EPS_SIGN).count();
        let neg = f.duals.iter().filter(|&&e| e < -EPS_SIGN).count();
        prop_assert!(brute.strict_count() <= nonpos);
        prop_assert!(neg <= brute.covered_count());
    }

    #[test]
    fn ridge_dual_equals_bruteforce(seed in 0u64..10_000, frac in prop_oneof![Just(0.01), Just(0.05)]) {
        let (ds, _) = gaussian(30, 5, seed);
        let spec = ProblemSpec::new(0.9, frac * 30.0).unwrap();
        let cfg = SolverConfig::default();
        let dual = loo_coverage_dual(&fit(&ds, &spec, &cfg).unwrap());
        let brute = loo_coverage_bruteforce(&ds, &spec, &cfg).unwrap();
        prop_assert_eq!(dual.covered_count(), brute.covered_count());
    }
}
