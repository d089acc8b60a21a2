use log::debug;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::polish::{partition, polish, Side};
use super::{prox_unchecked, Problem, Solution, SolverConfig};
use crate::error::{Error, Result};
use crate::model::KktCertificate;

const RELAXATION: f64 = 1.6;
const CHECK_EVERY: usize = 10;
const RESCALE_EVERY: usize = 100;
const MAX_RESCALES: usize = 40;
const POLISH_ROUNDS: usize = 8;
const FORCE_POLISH_EVERY: usize = 500;

/// Factorization of ρAᵀA + 2Λ (+ δI when the design is rank deficient).
struct Factor {
    chol: Cholesky<f64, Dyn>,
    delta: f64,
}

fn factor(ata: &DMatrix<f64>, penalty: &[f64], rho: f64, force_delta: bool) -> (Factor, bool) {
    let p = ata.nrows();
    let mut m = ata * rho;
    for j in 0..p {
        m[(j, j)] += 2.0 * penalty[j];
    }
    let diag_max = (0..p).map(|j| m[(j, j)]).fold(1.0, f64::max);
    if !force_delta {
        if let Some(chol) = Cholesky::new(m.clone()) {
            let l = chol.l_dirty();
            let min_pivot = (0..p).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-10 * diag_max {
                return (Factor { chol, delta: 0.0 }, false);
            }
        }
    }
    let delta = 1e-6 * diag_max;
    for j in 0..p {
        m[(j, j)] += delta;
    }
    let chol = Cholesky::new(m).expect("shifted matrix is positive definite");
    (Factor { chol, delta }, true)
}

/// Single scalar summary used to keep the best iterate.
fn merit(c: &KktCertificate) -> f64 {
    let y = c.response_scale.max(1.0);
    (c.primal_residual / y)
        .max(c.dual_residual)
        .max(c.duality_gap_per_sample.abs() / y)
        .max(c.stationarity_norm / c.stationarity_scale.max(1.0))
}

fn try_polish(
    pb: &Problem,
    sides: Vec<Side>,
    hint: &DVector<f64>,
    cfg: &SolverConfig,
    iterations: usize,
    rank_deficient: bool,
) -> Option<Solution> {
    let (w, eta) = polish(pb, sides, hint, POLISH_ROUNDS)?;
    let mut kkt = pb.certify(&w, &eta, 0.0, cfg.tolerance);
    kkt.iterations = iterations;
    kkt.polished = true;
    kkt.rank_deficient = rank_deficient;
    kkt.satisfied(cfg.tolerance).then_some(Solution { w, eta, kkt })
}

fn signed_duals(resid: &DVector<f64>, tau: f64, band: f64) -> DVector<f64> {
    resid.map(|r| {
        if r > band {
            tau
        } else if r < -band {
            -(1.0 - tau)
        } else {
            0.0
        }
    })
}

/// ADMM state on the splitting Aw + r = y with scaled multiplier u.
struct Admm<'a> {
    pb: &'a Problem,
    ata: DMatrix<f64>,
    fac: Factor,
    rank_deficient: bool,
    rho: f64,
    w: DVector<f64>,
    r: DVector<f64>,
    u: DVector<f64>,
    r_prev: DVector<f64>,
    aw: DVector<f64>,
    aw_hat: DVector<f64>,
    rhs: DVector<f64>,
    tmp: DVector<f64>,
}

impl<'a> Admm<'a> {
    fn new(pb: &'a Problem, rho: f64, w: DVector<f64>, eta: DVector<f64>) -> Admm<'a> {
        let n = pb.n();
        let p = pb.p();
        let ata = pb.a.tr_mul(&pb.a);
        let (fac, rank_deficient) = factor(&ata, &pb.penalty, rho, false);
        let mut r = pb.residuals(&w);
        for v in r.iter_mut() {
            *v = prox_unchecked(*v, 1.0 / rho, pb.tau);
        }
        Admm {
            pb,
            ata,
            fac,
            rank_deficient,
            rho,
            u: eta / -rho,
            r_prev: r.clone(),
            r,
            w,
            aw: DVector::zeros(n),
            aw_hat: DVector::zeros(n),
            rhs: DVector::zeros(p),
            tmp: DVector::zeros(n),
        }
    }

    fn step(&mut self) {
        let pb = self.pb;
        let rho = self.rho;
        // w-update: (ρAᵀA + 2Λ + δI) w = ρAᵀ(y − r − u) + δw
        self.tmp.copy_from(&pb.y);
        self.tmp -= &self.r;
        self.tmp -= &self.u;
        self.rhs.gemv_tr(rho, &pb.a, &self.tmp, 0.0);
        if self.fac.delta > 0.0 {
            self.rhs.axpy(self.fac.delta, &self.w, 1.0);
        }
        self.w.copy_from(&self.rhs);
        self.fac.chol.solve_mut(&mut self.w);

        self.aw.gemv(1.0, &pb.a, &self.w, 0.0);
        // relaxed: α Aw + (1−α)(y − r)
        self.aw_hat.copy_from(&pb.y);
        self.aw_hat -= &self.r;
        self.aw_hat *= 1.0 - RELAXATION;
        self.aw_hat.axpy(RELAXATION, &self.aw, 1.0);

        self.r_prev.copy_from(&self.r);
        for i in 0..pb.n() {
            self.r[i] = prox_unchecked(pb.y[i] - self.aw_hat[i] - self.u[i], 1.0 / rho, pb.tau);
            self.u[i] += self.aw_hat[i] + self.r[i] - pb.y[i];
        }
    }

    /// (primal residual, dual residual) of the latest step.
    fn residuals(&mut self) -> (f64, f64) {
        let pb = self.pb;
        let pri = (0..pb.n())
            .map(|i| (self.aw[i] + self.r[i] - pb.y[i]).abs())
            .fold(0.0, f64::max);
        self.tmp.copy_from(&self.r);
        self.tmp -= &self.r_prev;
        self.rhs.gemv_tr(self.rho, &pb.a, &self.tmp, 0.0);
        (pri, self.rhs.amax())
    }

    fn eta(&self) -> DVector<f64> {
        &self.u * -self.rho
    }

    fn sides(&self) -> Vec<Side> {
        self.r
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Side::Upper
                } else if v < 0.0 {
                    Side::Lower
                } else {
                    Side::Elbow
                }
            })
            .collect()
    }

    fn rescale(&mut self, scale: f64) {
        self.rho *= scale;
        self.u /= scale;
        self.fac = factor(&self.ata, &self.pb.penalty, self.rho, self.rank_deficient).0;
    }
}

/// A rough primal point after a fixed number of iterations.
pub(crate) fn approximate(pb: &Problem, cfg: &SolverConfig, iterations: usize) -> DVector<f64> {
    let mut admm = Admm::new(pb, cfg.admm_rho, DVector::zeros(pb.p()), DVector::zeros(pb.n()));
    let mut rescales = 0;
    for iter in 1..=iterations {
        admm.step();
        if iter % RESCALE_EVERY == 0 && rescales < MAX_RESCALES {
            let (pri, dual) = admm.residuals();
            if let Some(scale) = balance(pri, dual) {
                admm.rescale(scale);
                rescales += 1;
            }
        }
    }
    admm.w
}

fn balance(pri: f64, dual: f64) -> Option<f64> {
    if pri > 10.0 * dual {
        Some(2.0)
    } else if dual > 10.0 * pri {
        Some(0.5)
    } else {
        None
    }
}

pub(crate) fn solve(
    pb: &Problem,
    cfg: &SolverConfig,
    warm: Option<(DVector<f64>, Option<DVector<f64>>)>,
) -> Result<Solution> {
    let n = pb.n();
    let p = pb.p();
    let tau = pb.tau;
    let band = 1e-9 * pb.response_scale.max(1.0);

    let is_warm = warm.is_some();
    let (w0, eta0) = match warm {
        Some((w, eta)) => {
            let resid = pb.residuals(&w);
            let eta = eta.unwrap_or_else(|| signed_duals(&resid, tau, band));
            (w, eta)
        }
        None => (DVector::zeros(p), DVector::zeros(n)),
    };
    let mut admm = Admm::new(pb, cfg.admm_rho, w0, eta0);
    let rank_deficient = admm.rank_deficient;
    if is_warm {
        let resid = pb.residuals(&admm.w);
        if let Some(sol) = try_polish(pb, partition(&resid, band), &resid, cfg, 0, rank_deficient) {
            return Ok(sol);
        }
    }

    let mut rescales = 0;
    let mut last_sides: Option<Vec<Side>> = None;
    let mut last_attempt: Option<Vec<Side>> = None;
    let mut best: Option<Solution> = None;
    let mut best_merit = f64::INFINITY;
    let mut pri = f64::INFINITY;
    let mut dual = f64::INFINITY;

    for iter in 1..=cfg.max_iterations {
        admm.step();
        if iter % CHECK_EVERY != 0 && iter != cfg.max_iterations {
            continue;
        }
        (pri, dual) = admm.residuals();

        let sides = admm.sides();
        let stable = last_sides.as_ref() == Some(&sides);
        let fresh = last_attempt.as_ref() != Some(&sides);
        if (stable && fresh) || iter % FORCE_POLISH_EVERY == 0 {
            let hint = pb.residuals(&admm.w);
            if let Some(sol) = try_polish(pb, sides.clone(), &hint, cfg, iter, rank_deficient) {
                debug!("polished after {iter} iterations");
                return Ok(sol);
            }
            last_attempt = Some(sides.clone());
        }
        last_sides = Some(sides);

        let eta = admm.eta();
        let mut kkt = pb.certify(&admm.w, &eta, pri, cfg.tolerance);
        kkt.iterations = iter;
        kkt.rank_deficient = rank_deficient;
        let m = merit(&kkt);
        let done = kkt.satisfied(cfg.tolerance);
        if m < best_merit || done {
            best_merit = m;
            best = Some(Solution { w: admm.w.clone(), eta, kkt });
        }
        if done {
            return Ok(best.expect("just stored"));
        }

        if iter % RESCALE_EVERY == 0 && rescales < MAX_RESCALES {
            if let Some(scale) = balance(pri, dual) {
                admm.rescale(scale);
                rescales += 1;
            }
        }
    }

    let certificate = best
        .map(|s| s.kkt)
        .unwrap_or_else(|| pb.certify(&admm.w, &admm.eta(), pri, cfg.tolerance));
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        message: format!("primal residual {pri:.3e}, dual residual {dual:.3e}"),
        certificate: Box::new(certificate),
    })
}
