//! Penalized quantile regression with certified primal and dual solutions.
//!
//! The fit minimizes `Σ ℓ_τ(Y_i − β₀ − X_iᵀβ) + λ‖β‖²` (or the intercept-less
//! variant with a fixed offset `c` in place of `β₀`). The dual variables `η`
//! are the multipliers of the residual constraints `r = Y − β₀ − Xβ`; at an
//! optimum they satisfy `−(1−τ) ≤ η ≤ τ`, `Xᵀη = 2λβ` and `𝟙ᵀη = 0` when the
//! intercept is free.
//!
//! The solver runs ADMM on that splitting. The residual update is the closed
//! form pinball prox, which leaves interpolated samples at exactly zero, so the
//! iterates expose a guess of the elbow set. Whenever that guess stabilizes the
//! solver solves the reduced KKT system for the guessed partition and accepts
//! the result only if it certifies. Warm starts try that polishing step first.

mod admm;
mod polish;
mod prox;
mod simplex;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FitResult, InterceptMode, KktCertificate, ProblemSpec};

pub use prox::{pinball_conjugate_envelope, pinball_envelope, pinball_loss, pinball_prox};
#[cfg(test)]
pub(crate) use prox::envelope_unchecked;
pub(crate) use prox::prox_unchecked;

/// Duals within this distance of a box edge or of zero are treated as ties.
pub const KKT_EPS: f64 = 1e-6;

const JITTER_SEED: u64 = 0x6a09_e667_f3bc_c908;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Applied to the scaled KKT residuals and the per-sample duality gap.
    pub tolerance: f64,
    /// Initial ADMM penalty; rescaled adaptively.
    pub admm_rho: f64,
    #[serde(skip)]
    pub warm_start: Option<FitResult>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 50_000,
            tolerance: 1e-9,
            admm_rho: 1.0,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    pub fn with_warm_start(&self, fit: FitResult) -> SolverConfig {
        SolverConfig {
            warm_start: Some(fit),
            ..self.clone()
        }
    }

    pub fn cold(&self) -> SolverConfig {
        SolverConfig {
            warm_start: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("solver tolerance must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be >= 1"));
        }
        if !(self.admm_rho > 0.0) {
            return Err(Error::domain("admm_rho must be > 0"));
        }
        Ok(())
    }
}

/// Internal form: minimize Σ ℓ_τ(y_i − a_iᵀw) + Σ_j pen_j w_j².
pub(crate) struct Problem {
    pub a: DMatrix<f64>,
    pub y: DVector<f64>,
    pub penalty: Vec<f64>,
    pub tau: f64,
    pub response_scale: f64,
}

impl Problem {
    fn build(dataset: &Dataset, spec: &ProblemSpec) -> Problem {
        let n = dataset.n();
        let d = dataset.d();
        let mut features = dataset.features().clone();
        if spec.jitter > 0.0 {
            // Row-major draw order keeps the noise of the first n rows
            // identical when a row is appended.
            let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
            let normal = Normal::new(0.0, spec.jitter).expect("jitter validated");
            for i in 0..n {
                for j in 0..d {
                    features[(i, j)] += normal.sample(&mut rng);
                }
            }
        }
        let (a, y, penalty) = match spec.intercept_mode {
            InterceptMode::FreeIntercept => {
                let a = features.insert_column(0, 1.0);
                let mut penalty = vec![spec.lambda; d + 1];
                penalty[0] = 0.0;
                (a, dataset.response().clone(), penalty)
            }
            InterceptMode::FixedOffset(c) => {
                let y = dataset.response().map(|v| v - c);
                (features, y, vec![spec.lambda; d])
            }
        };
        Problem {
            a,
            y,
            penalty,
            tau: spec.tau,
            response_scale: dataset.response_scale(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.a.ncols()
    }

    pub fn residuals(&self, w: &DVector<f64>) -> DVector<f64> {
        let mut r = self.y.clone();
        if self.p() > 0 {
            r.gemv(-1.0, &self.a, w, 1.0);
        }
        r
    }

    /// Optimality certificate for the pair (w, η). `primal_residual` is the
    /// split-variable residual reported by the caller.
    pub fn certify(
        &self,
        w: &DVector<f64>,
        eta: &DVector<f64>,
        primal_residual: f64,
        tolerance: f64,
    ) -> KktCertificate {
        let tau = self.tau;
        let n = self.n();
        let resid = self.residuals(w);
        let band = tolerance * self.response_scale.max(1.0);
        let mut dual_residual: f64 = 0.0;
        for (&r, &e) in resid.iter().zip(eta.iter()) {
            let box_violation = (e - tau).max(-(1.0 - tau) - e).max(0.0);
            let slack = if r > band {
                (e - tau).abs()
            } else if r < -band {
                (e + 1.0 - tau).abs()
            } else {
                0.0
            };
            dual_residual = dual_residual.max(box_violation).max(slack);
        }
        let at_eta = if self.p() > 0 {
            self.a.tr_mul(eta)
        } else {
            DVector::zeros(0)
        };
        let mut stationarity: f64 = 0.0;
        let mut dual_objective = eta.dot(&self.y);
        let mut penalty_value = 0.0;
        for j in 0..self.p() {
            let pen = self.penalty[j];
            stationarity = stationarity.max((at_eta[j] - 2.0 * pen * w[j]).abs());
            penalty_value += pen * w[j] * w[j];
            if pen > 0.0 {
                dual_objective -= at_eta[j] * at_eta[j] / (4.0 * pen);
            }
        }
        let primal_objective: f64 =
            resid.iter().map(|&r| pinball_loss(r, tau)).sum::<f64>() + penalty_value;
        let column_mass = (0..self.p())
            .map(|j| self.a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        KktCertificate {
            primal_residual,
            dual_residual,
            duality_gap_per_sample: (primal_objective - dual_objective) / n as f64,
            stationarity_norm: stationarity,
            stationarity_scale: column_mass * tau.max(1.0 - tau),
            response_scale: self.response_scale,
            iterations: 0,
            polished: false,
            rank_deficient: false,
        }
    }
}

/// Primal/dual pair in the internal coordinates.
pub(crate) struct Solution {
    pub w: DVector<f64>,
    pub eta: DVector<f64>,
    pub kkt: KktCertificate,
}

fn assemble(dataset: &Dataset, spec: &ProblemSpec, pb: &Problem, sol: Solution) -> FitResult {
    let residuals = pb.residuals(&sol.w);
    let (offset, beta) = match spec.intercept_mode {
        InterceptMode::FreeIntercept => (sol.w[0], sol.w.rows(1, dataset.d()).into_owned()),
        InterceptMode::FixedOffset(c) => (c, sol.w.clone()),
    };
    FitResult {
        intercept_or_offset: offset,
        beta,
        residuals,
        duals: sol.eta,
        kkt: sol.kkt,
        tau: spec.tau,
        lambda: spec.lambda,
        intercept_mode: spec.intercept_mode,
    }
}

/// Warm-start coefficients in internal coordinates, if compatible.
fn warm_coefficients(pb: &Problem, spec: &ProblemSpec, warm: &FitResult) -> Option<DVector<f64>> {
    let w = match spec.intercept_mode {
        InterceptMode::FreeIntercept => {
            let mut w = DVector::zeros(warm.beta.len() + 1);
            w[0] = match warm.intercept_mode {
                InterceptMode::FreeIntercept => warm.intercept_or_offset,
                InterceptMode::FixedOffset(_) => 0.0,
            };
            w.rows_mut(1, warm.beta.len()).copy_from(&warm.beta);
            w
        }
        InterceptMode::FixedOffset(_) => warm.beta.clone(),
    };
    (w.len() == pb.p() && w.iter().all(|v| v.is_finite())).then_some(w)
}

/// Fits the penalized quantile regression described by `spec`.
pub fn fit(dataset: &Dataset, spec: &ProblemSpec, config: &SolverConfig) -> Result<FitResult> {
    spec.validate()?;
    config.validate()?;
    let pb = Problem::build(dataset, spec);
    if pb.p() == 0 {
        return Ok(assemble(dataset, spec, &pb, offset_only(&pb, config.tolerance)));
    }
    let warm = config.warm_start.as_ref().and_then(|ws| {
        let w = warm_coefficients(&pb, spec, ws)?;
        let eta = (ws.duals.len() == pb.n()).then(|| ws.duals.clone());
        Some((w, eta))
    });
    let sol = if pb.penalty.iter().all(|&v| v == 0.0) {
        solve_unpenalized(&pb, config, warm)?
    } else {
        admm::solve(&pb, config, warm)?
    };
    Ok(assemble(dataset, spec, &pb, sol))
}

const HINT_ITERATIONS: usize = 300;

/// Vertex pivoting from a basis guessed from the warm start (or a short ADMM
/// run), falling back to full ADMM if the design has no invertible basis.
fn solve_unpenalized(
    pb: &Problem,
    config: &SolverConfig,
    warm: Option<(DVector<f64>, Option<DVector<f64>>)>,
) -> Result<Solution> {
    let hint_w = match &warm {
        Some((w, _)) => w.clone(),
        None => admm::approximate(pb, config, HINT_ITERATIONS),
    };
    let hint = pb.residuals(&hint_w);
    if let Some(basis) = simplex::initial_basis(pb, &hint) {
        if let Some(v) = simplex::solve(pb, basis) {
            let mut kkt = pb.certify(&v.w, &v.eta, 0.0, config.tolerance);
            kkt.iterations = v.pivots;
            kkt.polished = true;
            if kkt.satisfied(config.tolerance) {
                return Ok(Solution { w: v.w, eta: v.eta, kkt });
            }
        }
    }
    admm::solve(pb, config, warm)
}

/// Fits on the n training points plus `(x_new, y_guess)`; the returned duals
/// have n + 1 entries, the last one belonging to the appended point.
pub fn fit_augmented(
    dataset: &Dataset,
    spec: &ProblemSpec,
    config: &SolverConfig,
    x_new: &[f64],
    y_guess: f64,
) -> Result<FitResult> {
    let augmented = dataset.with_row(x_new, y_guess)?;
    fit(&augmented, spec, config)
}

/// d = 0 with a fixed offset: nothing to optimize.
fn offset_only(pb: &Problem, tolerance: f64) -> Solution {
    let tau = pb.tau;
    let eta = pb.y.map(|r| {
        if r > 0.0 {
            tau
        } else if r < 0.0 {
            -(1.0 - tau)
        } else {
            0.0
        }
    });
    let w = DVector::zeros(0);
    let mut kkt = pb.certify(&w, &eta, 0.0, tolerance);
    kkt.polished = true;
    Solution { w, eta, kkt }
}
