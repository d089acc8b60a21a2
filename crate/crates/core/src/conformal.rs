//! Prediction by thresholding the dual of the test point in the augmented
//! fit. The map y ↦ η̂_{n+1}(y) is non-decreasing, so every cutoff here is a
//! bisection on y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{empirical_quantile, Dataset, FitResult, ProblemSpec};
use crate::solver::{fit, fit_augmented, SolverConfig};

pub const MAX_DOUBLINGS: usize = 60;
/// Slack when comparing a numerical dual against a threshold.
pub const DUAL_CMP_EPS: f64 = 1e-9;

/// A cutoff that may be infinite when the threshold lies at or beyond the
/// edge of the dual box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub value: f64,
    pub sentinel: bool,
}

impl Cutoff {
    fn finite(value: f64) -> Cutoff {
        Cutoff { value, sentinel: false }
    }

    fn infinite(positive: bool) -> Cutoff {
        Cutoff {
            value: if positive { f64::INFINITY } else { f64::NEG_INFINITY },
            sentinel: true,
        }
    }
}

/// Holds the training fit used to center brackets and seed warm starts.
pub struct DualThresholdPredictor<'a> {
    dataset: &'a Dataset,
    spec: ProblemSpec,
    config: SolverConfig,
    base: FitResult,
    tol_y: f64,
    half_width: f64,
}

impl<'a> DualThresholdPredictor<'a> {
    pub fn new(dataset: &'a Dataset, spec: &ProblemSpec, config: &SolverConfig) -> Result<Self> {
        let base = fit(dataset, spec, config)?;
        let scale = dataset.response_scale();
        Ok(DualThresholdPredictor {
            dataset,
            spec: *spec,
            config: config.cold(),
            base,
            tol_y: 1e-6 * scale,
            half_width: 10.0 * scale,
        })
    }

    pub fn base_fit(&self) -> &FitResult {
        &self.base
    }

    pub fn tol_y(&self) -> f64 {
        self.tol_y
    }

    pub fn with_tol_y(mut self, tol_y: f64) -> Self {
        self.tol_y = tol_y;
        self
    }

    /// t̂: the empirical τ-quantile of the training duals.
    pub fn fixed_threshold(&self) -> Result<f64> {
        empirical_quantile(self.spec.tau, self.base.duals.as_slice())
    }

    pub fn augmented_fit(&self, x_new: &[f64], y: f64, warm: Option<&FitResult>) -> Result<FitResult> {
        let start = warm.cloned().unwrap_or_else(|| self.base.clone());
        let cfg = self.config.with_warm_start(start);
        fit_augmented(self.dataset, &self.spec, &cfg, x_new, y)
    }

    pub fn dual_at(&self, x_new: &[f64], y: f64) -> Result<f64> {
        let f = self.augmented_fit(x_new, y, None)?;
        Ok(f.duals[self.dataset.n()])
    }

    /// sup{y : accept(y)} for a predicate that holds on a left ray.
    fn sup<F>(&self, x_new: &[f64], accept: F) -> Result<f64>
    where
        F: Fn(&FitResult) -> bool,
    {
        if x_new.len() != self.dataset.d() {
            return Err(Error::domain(format!(
                "x_new has {} entries, expected {}",
                x_new.len(),
                self.dataset.d()
            )));
        }
        let center = self.base.predict(x_new);
        let h = self.half_width;
        let mut warm: Option<FitResult> = None;
        let eval = |y: f64, warm: &mut Option<FitResult>| -> Result<bool> {
            let f = self.augmented_fit(x_new, y, warm.as_ref())?;
            let ok = accept(&f);
            *warm = Some(f);
            Ok(ok)
        };

        let mut lo = center - h;
        let mut hi = center + h;
        let mut step = h;
        let mut doublings = 0;
        while !eval(lo, &mut warm)? {
            hi = lo;
            step *= 2.0;
            lo -= step;
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::domain("cutoff bracket expansion failed below"));
            }
        }
        step = h;
        while eval(hi, &mut warm)? {
            lo = hi;
            step *= 2.0;
            hi += step;
            doublings += 1;
            if doublings > MAX_DOUBLINGS {
                return Err(Error::domain("cutoff bracket expansion failed above"));
            }
        }
        while hi - lo > self.tol_y {
            let mid = 0.5 * (lo + hi);
            if eval(mid, &mut warm)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// sup{y : η̂_{n+1}(y) ≤ t}.
    pub fn quantile_dual_threshold(&self, x_new: &[f64], t: f64) -> Result<Cutoff> {
        let tau = self.spec.tau;
        if !t.is_finite() {
            return Err(Error::domain("threshold must be finite"));
        }
        if t >= tau - DUAL_CMP_EPS {
            return Ok(Cutoff::infinite(true));
        }
        if t < -(1.0 - tau) {
            return Ok(Cutoff::infinite(false));
        }
        let n = self.dataset.n();
        self.sup(x_new, |f| f.duals[n] <= t + DUAL_CMP_EPS).map(Cutoff::finite)
    }

    /// Cutoff at the fixed threshold t̂.
    pub fn fixed_threshold_predict(&self, x_new: &[f64]) -> Result<Cutoff> {
        self.quantile_dual_threshold(x_new, self.fixed_threshold()?)
    }

    /// Cutoff at a caller-supplied U ∈ (−(1−τ), τ).
    pub fn randomized_gcc_predict(&self, x_new: &[f64], u: f64) -> Result<Cutoff> {
        let tau = self.spec.tau;
        if !(u > -(1.0 - tau) && u < tau) {
            return Err(Error::domain(format!("u={u} outside (-(1-tau), tau)")));
        }
        self.quantile_dual_threshold(x_new, u)
    }

    /// Largest y covered by the fit that includes (x_new, y).
    pub fn full_conformal_predict(&self, x_new: &[f64]) -> Result<Cutoff> {
        let n = self.dataset.n();
        let band = 1e-9 * self.dataset.response_scale();
        self.sup(x_new, |f| f.residuals[n] <= band).map(Cutoff::finite)
    }

    /// Y ≤ cutoff(t) ⟺ η̂_{n+1}(Y) ≤ t, so coverage of a single test point
    /// needs one augmented fit instead of a bisection.
    pub fn covers(&self, x_new: &[f64], y: f64, t: f64) -> Result<bool> {
        if t >= self.spec.tau - DUAL_CMP_EPS {
            return Ok(true);
        }
        Ok(self.dual_at(x_new, y)? <= t + DUAL_CMP_EPS)
    }
}

pub fn dual_at(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
    y: f64,
) -> Result<f64> {
    let f = fit_augmented(dataset, spec, config, x_new, y)?;
    Ok(f.duals[dataset.n()])
}

pub fn quantile_dual_threshold(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
    t: f64,
) -> Result<Cutoff> {
    DualThresholdPredictor::new(dataset, spec, config)?.quantile_dual_threshold(x_new, t)
}

pub fn fixed_threshold_predict(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
) -> Result<Cutoff> {
    DualThresholdPredictor::new(dataset, spec, config)?.fixed_threshold_predict(x_new)
}

pub fn randomized_gcc_predict(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
    u: f64,
) -> Result<Cutoff> {
    DualThresholdPredictor::new(dataset, spec, config)?.randomized_gcc_predict(x_new, u)
}

pub fn full_conformal_predict(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
) -> Result<Cutoff> {
    DualThresholdPredictor::new(dataset, spec, config)?.full_conformal_predict(x_new)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Intercept-only cutoff by order statistics. With n+1 points the fit is
    /// Y_(k), k = ⌈τ(n+1)⌉; while y sits at the k-th position its dual is the
    /// interior value (k−1)(1−τ) − (n+1−k)τ.
    fn order_statistic_cutoff(y: &[f64], tau: f64, t: f64) -> f64 {
        let n = y.len();
        let k = (tau * (n as f64 + 1.0) - 1e-9).ceil() as usize;
        let interior = (k as f64 - 1.0) * (1.0 - tau) - (n as f64 + 1.0 - k as f64) * tau;
        let mut s = y.to_vec();
        s.sort_by(f64::total_cmp);
        // y below Y_(k−1) has dual −(1−τ); in [Y_(k−1), Y_(k)] it is the fitted
        // point with the interior dual; above Y_(k) it has dual τ.
        if interior <= t + DUAL_CMP_EPS {
            s[k - 1]
        } else {
            s[k - 2]
        }
    }

    #[test]
    fn intercept_only_matches_order_statistics() {
        let y = [0.3, -1.2, 2.5, 0.9, 1.7, -0.4, 0.1, 3.3, -2.0, 1.1];
        let ds = Dataset::intercept_only(&y).unwrap();
        for tau in [0.5, 0.7, 0.85] {
            let spec = ProblemSpec::new(tau, 0.0).unwrap();
            let p = DualThresholdPredictor::new(&ds, &spec, &SolverConfig::default()).unwrap();
            for t in [-0.4, -0.05, 0.0, 0.2, 0.45] {
                if t <= -(1.0 - tau) || t >= tau {
                    continue;
                }
                let got = p.quantile_dual_threshold(&[], t).unwrap();
                let want = order_statistic_cutoff(&y, tau, t);
                assert!((got.value - want).abs() < 1e-5, "tau={tau} t={t}: {} vs {want}", got.value);
            }
        }
    }

    #[test]
    fn sentinels_at_box_edges() {
        let ds = Dataset::intercept_only(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ProblemSpec::new(0.8, 0.0).unwrap();
        let p = DualThresholdPredictor::new(&ds, &spec, &SolverConfig::default()).unwrap();
        let hi = p.quantile_dual_threshold(&[], 0.8).unwrap();
        assert!(hi.sentinel && hi.value == f64::INFINITY);
        let lo = p.quantile_dual_threshold(&[], -0.5).unwrap();
        assert!(lo.sentinel && lo.value == f64::NEG_INFINITY);
        assert!(p.randomized_gcc_predict(&[], 0.8).is_err());
    }
}
