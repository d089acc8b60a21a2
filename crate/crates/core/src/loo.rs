//! Leave-one-out coverage read off the signs of a single fit's duals, and the
//! n-refit brute force it replaces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FitResult, ProblemSpec};
use crate::solver::{fit, SolverConfig};

/// Duals with |η| ≤ EPS_SIGN are ties.
pub const EPS_SIGN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooSummary {
    pub coverage: f64,
    pub tie_count: usize,
    pub per_sample_covered: Vec<bool>,
    /// Samples whose coverage status is ambiguous.
    pub per_sample_tie: Vec<bool>,
}

impl LooSummary {
    fn from_flags(covered: Vec<bool>, ties: Vec<bool>) -> LooSummary {
        let n = covered.len();
        let count = covered.iter().filter(|&&c| c).count();
        LooSummary {
            coverage: if n == 0 { 0.0 } else { count as f64 / n as f64 },
            tie_count: ties.iter().filter(|&&t| t).count(),
            per_sample_covered: covered,
            per_sample_tie: ties,
        }
    }

    pub fn covered_count(&self) -> usize {
        self.per_sample_covered.iter().filter(|&&c| c).count()
    }

    /// Covered samples that are not ties.
    pub fn strict_count(&self) -> usize {
        self.per_sample_covered
            .iter()
            .zip(&self.per_sample_tie)
            .filter(|(&c, &t)| c && !t)
            .count()
    }
}

/// Sample i counts as covered when η̂_i ≤ EPS_SIGN. No refits.
pub fn loo_coverage_dual(fit: &FitResult) -> LooSummary {
    let covered = fit.duals.iter().map(|&e| e <= EPS_SIGN).collect();
    let ties = fit.duals.iter().map(|&e| e.abs() <= EPS_SIGN).collect();
    LooSummary::from_flags(covered, ties)
}

fn drop_entry(fit: &FitResult, i: usize) -> FitResult {
    let mut warm = fit.clone();
    warm.duals = fit.duals.clone().remove_row(i);
    warm.residuals = fit.residuals.clone().remove_row(i);
    warm
}

/// Refits without each sample in turn. Sample i is covered when
/// Y_i ≤ fitted_{−i}(X_i) + 1e−9·scale, and a tie when within that band.
/// It is also a tie when the full fit interpolates Y_i with a zero dual:
/// the full solution then solves the reduced problem too, so some
/// leave-one-out solution passes exactly through Y_i.
pub fn loo_coverage_bruteforce(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
) -> Result<LooSummary> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::domain("leave-one-out needs at least two samples"));
    }
    let full = fit(dataset, spec, &config.cold())?;
    let band = 1e-9 * dataset.response_scale();
    let outcomes: Vec<Result<(bool, bool)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let reduced = dataset.without_row(i);
            let cfg = config.with_warm_start(drop_entry(&full, i));
            let loo = fit(&reduced, spec, &cfg).map_err(|e| Error::Refit {
                index: i,
                source: Box::new(e),
            })?;
            let x = dataset.row(i);
            let gap = dataset.response()[i] - loo.predict(x.as_slice());
            let twin = full.residuals[i].abs() <= band && full.duals[i].abs() <= EPS_SIGN;
            let tie = twin || gap.abs() <= band;
            Ok((gap <= band || tie, tie))
        })
        .collect();
    let mut covered = Vec::with_capacity(n);
    let mut ties = Vec::with_capacity(n);
    for outcome in outcomes {
        let (c, t) = outcome?;
        covered.push(c);
        ties.push(t);
    }
    Ok(LooSummary::from_flags(covered, ties))
}

/// max_j |mean(X_ij (covered_i − τ))| / mean|X_ij| over feature columns,
/// with covered_i from dual signs. Zero columns are skipped.
pub fn loo_multiaccuracy(fit: &FitResult, dataset: &Dataset, tau: f64) -> Result<f64> {
    let summary = loo_coverage_dual(fit);
    let weights: Vec<f64> = summary
        .per_sample_covered
        .iter()
        .map(|&c| if c { 1.0 } else { 0.0 } - tau)
        .collect();
    column_multiaccuracy(dataset.features(), &weights)
}

/// Shared by the LOO and test-set metrics: max_j |mean(X_ij w_i)| / mean|X_ij|.
pub(crate) fn column_multiaccuracy(x: &nalgebra::DMatrix<f64>, weights: &[f64]) -> Result<f64> {
    let n = x.nrows() as f64;
    let mut worst: Option<f64> = None;
    for col in x.column_iter() {
        let denom = col.iter().map(|v| v.abs()).sum::<f64>() / n;
        if denom == 0.0 {
            continue;
        }
        let num = col.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / n;
        let value = num.abs() / denom;
        worst = Some(worst.map_or(value, |w: f64| w.max(value)));
    }
    worst.ok_or_else(|| Error::domain("multiaccuracy needs at least one non-zero feature column"))
}
