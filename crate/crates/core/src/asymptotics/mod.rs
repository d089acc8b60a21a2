//! Deterministic saddle program describing quantile regression on Gaussian
//! designs with d/n → γ and a ridge penalty 𝓡_d(β) = dλ‖β‖².
//!
//! The program is min over x = (β₀, M_u, ρ₁) of max over y = (M_η, ρ₂) of
//!
//! ```text
//! A = E[e_ℓ(W; ρ₁/M_η)] − γM_η²M_u/(2ρ₂) + M_ηρ₁/2 − M_uρ₂/2 + R
//! ```
//!
//! with W ~ N(−β₀, M_u² + σ²). The ridge term in closed form is
//! R = κ(γc² + s₂)/(1 + 2κM_u/ρ₂) with c = M_ηM_u/ρ₂, κ = λγ and
//! s₂ = E[(√d β̃₁)²]. As λ → ∞ it forces M_u → √s₂, the norm of the truth,
//! which is what a fit shrunk to zero must give.
//!
//! Every expectation is a truncated Gaussian moment, so the inner maximum is
//! found by nested monotone bisection on the partial derivatives and the
//! outer minimum by a damped projected Newton method on the inner value,
//! whose gradient follows from the envelope theorem.

mod envelopes;
mod gaussian;
mod quadrature;

pub use envelopes::{l1_conjugate_envelope, l1_envelope, l2_conjugate_envelope, l2_envelope};
pub use gaussian::{envelope_moments, std_cdf, std_pdf, std_quantile, EnvelopeMoments, Gaussian};
pub use quadrature::{expect as gh_expect, gauss_hermite, DEFAULT_NODES as GH_NODES};

use log::warn;
use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this the estimation error is treated as zero and the dual law
/// collapses to two atoms.
pub const DEGENERATE_M_U: f64 = 1e-4;
const MAX_NEWTON_STEPS: usize = 200;
const STEP_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-7;
const MAX_WIDENINGS: usize = 5;
const PIN_SLACK: f64 = 1e-6;

/// Box constants of the program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub beta0: f64,
    pub m_u: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub m_eta_lo: f64,
    pub m_eta_hi: f64,
}

impl Bounds {
    pub fn defaults(tau: f64) -> Bounds {
        Bounds {
            beta0: 20.0,
            m_u: 20.0,
            rho1: 50.0,
            rho2: 50.0,
            m_eta_lo: 0.45 * tau.min(1.0 - tau),
            m_eta_hi: tau.max(1.0 - tau),
        }
    }

    fn widened(self) -> Bounds {
        Bounds {
            beta0: 2.0 * self.beta0,
            m_u: 2.0 * self.m_u,
            rho1: 2.0 * self.rho1,
            rho2: 2.0 * self.rho2,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticProblem {
    pub gamma: f64,
    pub tau: f64,
    pub sigma_eps: f64,
    pub beta_second_moment: f64,
    /// λ in 𝓡_d = dλ‖β‖²; a finite-sample fit uses penalty d·λ on ‖β‖².
    pub lambda_scaled: f64,
    pub bounds: Bounds,
}

impl AsymptoticProblem {
    pub fn new(gamma: f64, tau: f64, sigma_eps: f64) -> AsymptoticProblem {
        AsymptoticProblem {
            gamma,
            tau,
            sigma_eps,
            beta_second_moment: 1.0,
            lambda_scaled: 0.0,
            bounds: Bounds::defaults(tau),
        }
    }

    pub fn with_lambda(mut self, lambda_scaled: f64) -> Self {
        self.lambda_scaled = lambda_scaled;
        self
    }

    pub fn with_beta_second_moment(mut self, s2: f64) -> Self {
        self.beta_second_moment = s2;
        self
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let two_over_pi = 2.0 / std::f64::consts::PI;
        if !(self.gamma > 0.0 && self.gamma < two_over_pi) {
            return Err(Error::domain(format!("gamma={} outside (0, 2/pi)", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::domain(format!("tau={} outside (0, 1)", self.tau)));
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::domain("sigma_eps must be positive and finite"));
        }
        if !(self.beta_second_moment >= 0.0 && self.beta_second_moment.is_finite()) {
            return Err(Error::domain("beta_second_moment must be non-negative"));
        }
        if !(self.lambda_scaled >= 0.0 && self.lambda_scaled.is_finite()) {
            return Err(Error::domain("lambda_scaled must be non-negative"));
        }
        let b = &self.bounds;
        if ![b.beta0, b.m_u, b.rho1, b.rho2, b.m_eta_lo].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::domain("box constants must be positive"));
        }
        let side = (0.5 * self.tau.min(1.0 - self.tau).powi(2)).sqrt();
        if !(b.m_eta_lo < side && b.m_eta_hi > b.m_eta_lo) {
            return Err(Error::domain(format!(
                "need c_eta < {side:.4} and C_eta > c_eta, got ({}, {})",
                b.m_eta_lo, b.m_eta_hi
            )));
        }
        Ok(())
    }

    fn kappa(&self) -> f64 {
        self.lambda_scaled * self.gamma
    }

    fn w_law(&self, beta0: f64, m_u: f64) -> Gaussian {
        Gaussian::new(-beta0, (m_u * m_u + self.sigma_eps * self.sigma_eps).sqrt())
    }

    /// A at x = (β₀, M_u, ρ₁), y = (M_η, ρ₂).
    pub fn objective(&self, x: [f64; 3], y: [f64; 2]) -> f64 {
        let [beta0, m_u, rho1] = x;
        let [m_eta, rho2] = y;
        let g = self.gamma;
        let env = envelope_moments(self.w_law(beta0, m_u), rho1 / m_eta, self.tau).envelope;
        env - g * m_eta * m_eta * m_u / (2.0 * rho2) + m_eta * rho1 / 2.0 - m_u * rho2 / 2.0
            + self.ridge(m_u, m_eta, rho2).value
    }

    fn ridge(&self, m_u: f64, m_eta: f64, rho2: f64) -> Ridge {
        let k = self.kappa();
        if k == 0.0 {
            return Ridge::default();
        }
        let g = self.gamma;
        let s2 = self.beta_second_moment;
        let c = m_eta * m_u / rho2;
        let den = 1.0 + 2.0 * k * m_u / rho2;
        let num = g * c * c + s2;
        Ridge {
            value: k * num / den,
            d_m_u: k * 2.0 * g * c * m_eta / rho2 / den - k * num * (2.0 * k / rho2) / (den * den),
            d_m_eta: k * 2.0 * g * c * m_u / rho2 / den,
            d_rho2: -2.0 * k * g * c * c / (rho2 * den) + 2.0 * k * k * m_u * num / (rho2 * rho2 * den * den),
        }
    }

    fn d_rho2(&self, m_u: f64, m_eta: f64, rho2: f64) -> f64 {
        self.gamma * m_eta * m_eta * m_u / (2.0 * rho2 * rho2) - m_u / 2.0
            + self.ridge(m_u, m_eta, rho2).d_rho2
    }

    /// ∂A/∂M_η with ρ₂ held fixed.
    fn d_m_eta(&self, x: [f64; 3], m_eta: f64, rho2: f64) -> f64 {
        let [beta0, m_u, rho1] = x;
        let mom = envelope_moments(self.w_law(beta0, m_u), rho1 / m_eta, self.tau);
        mom.clipped_sq / (2.0 * rho1) + rho1 / 2.0 - self.gamma * m_eta * m_u / rho2
            + self.ridge(m_u, m_eta, rho2).d_m_eta
    }

    /// ∇ₓA at (x, y).
    pub fn grad_x(&self, x: [f64; 3], y: [f64; 2]) -> [f64; 3] {
        let [beta0, m_u, rho1] = x;
        let [m_eta, rho2] = y;
        let r = rho1 / m_eta;
        let mom = envelope_moments(self.w_law(beta0, m_u), r, self.tau);
        let d_m_u = m_u * mom.mid_prob / r - self.gamma * m_eta * m_eta / (2.0 * rho2) - rho2 / 2.0
            + self.ridge(m_u, m_eta, rho2).d_m_u;
        let d_rho1 = -m_eta * mom.clipped_sq / (2.0 * rho1 * rho1) + m_eta / 2.0;
        [-mom.clipped_mean, d_m_u, d_rho1]
    }

    /// ∇_y A at (x, y).
    pub fn grad_y(&self, x: [f64; 3], y: [f64; 2]) -> [f64; 2] {
        [self.d_m_eta(x, y[0], y[1]), self.d_rho2(x[1], y[0], y[1])]
    }

    fn best_rho2(&self, m_u: f64, m_eta: f64, hi: f64) -> f64 {
        if self.kappa() == 0.0 {
            return (m_eta * self.gamma.sqrt()).min(hi);
        }
        if m_u == 0.0 || self.d_rho2(m_u, m_eta, hi) >= 0.0 {
            return hi;
        }
        // derivative is +∞ at 0 and decreasing; bisect geometrically
        let mut lo = hi * 1e-15;
        let mut up = hi;
        for _ in 0..200 {
            let mid = (lo * up).sqrt();
            if self.d_rho2(m_u, m_eta, mid) > 0.0 {
                lo = mid;
            } else {
                up = mid;
            }
            if up - lo <= 1e-15 * up {
                break;
            }
        }
        0.5 * (lo + up)
    }

    /// argmax over y at fixed x.
    pub fn inner_argmax(&self, x: [f64; 3]) -> [f64; 2] {
        self.inner_in(x, &self.bounds)
    }

    fn inner_in(&self, x: [f64; 3], b: &Bounds) -> [f64; 2] {
        let deriv = |m_eta: f64| {
            let rho2 = self.best_rho2(x[1], m_eta, b.rho2);
            (self.d_m_eta(x, m_eta, rho2), rho2)
        };
        let (d_lo, rho2_lo) = deriv(b.m_eta_lo);
        if d_lo <= 0.0 {
            return [b.m_eta_lo, rho2_lo];
        }
        let (d_hi, rho2_hi) = deriv(b.m_eta_hi);
        if d_hi >= 0.0 {
            return [b.m_eta_hi, rho2_hi];
        }
        let (mut lo, mut hi) = (b.m_eta_lo, b.m_eta_hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if deriv(mid).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let m_eta = 0.5 * (lo + hi);
        [m_eta, self.best_rho2(x[1], m_eta, b.rho2)]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Ridge {
    value: f64,
    d_m_u: f64,
    d_m_eta: f64,
    d_rho2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSolution {
    pub beta0_star: f64,
    pub m_u_star: f64,
    pub rho1_star: f64,
    pub m_eta_star: f64,
    pub rho2_star: f64,
    pub objective_value: f64,
    /// Limit of the test coverage P(Y ≤ β̂₀ + xᵀβ̂).
    pub predicted_coverage: f64,
    pub degenerate: bool,
    pub newton_steps: usize,
}

impl AsymptoticSolution {
    /// |ρ₁ − √E[(W − prox(W; ρ₁/M_η))²]|.
    pub fn rho1_fixed_point_residual(&self, problem: &AsymptoticProblem) -> f64 {
        let w = problem.w_law(self.beta0_star, self.m_u_star);
        let mom = envelope_moments(w, self.rho1_star / self.m_eta_star, problem.tau);
        (self.rho1_star - mom.clipped_sq.sqrt()).abs()
    }
}

struct Newton<'a> {
    pb: &'a AsymptoticProblem,
    bounds: Bounds,
}

impl Newton<'_> {
    fn lower(&self) -> [f64; 3] {
        [-self.bounds.beta0, 0.0, 0.0]
    }

    fn upper(&self) -> [f64; 3] {
        [self.bounds.beta0, self.bounds.m_u, self.bounds.rho1]
    }

    fn eval(&self, x: [f64; 3]) -> (f64, [f64; 3], [f64; 2]) {
        let y = self.pb.inner_in(x, &self.bounds);
        (self.pb.objective(x, y), self.pb.grad_x(x, y), y)
    }

    fn grad(&self, x: [f64; 3]) -> [f64; 3] {
        self.eval(x).1
    }

    fn hessian(&self, x: [f64; 3]) -> Matrix3<f64> {
        let lo = self.lower();
        let hi = self.upper();
        let mut h = Matrix3::zeros();
        for j in 0..3 {
            let step = 1e-5 * x[j].abs().max(1e-2);
            let mut plus = x;
            let mut minus = x;
            // stay strictly inside: ρ₁ must remain positive
            let room_lo = if j == 2 { x[j] * 0.5 } else { x[j] - lo[j] };
            let (a, b) = if room_lo >= step {
                (step, step)
            } else {
                (step, 0.0)
            };
            plus[j] = (x[j] + a).min(hi[j]);
            minus[j] = x[j] - b;
            let gp = self.grad(plus);
            let gm = self.grad(minus);
            let width = plus[j] - minus[j];
            for i in 0..3 {
                h[(i, j)] = (gp[i] - gm[i]) / width;
            }
        }
        (h + h.transpose()) * 0.5
    }

    fn run(&self, start: [f64; 3], trace: &mut Vec<[f64; 5]>) -> Result<([f64; 3], [f64; 2], f64, usize)> {
        let lo = self.lower();
        let hi = self.upper();
        let mut x = start;
        let (mut v, mut g, mut y) = self.eval(x);
        trace.push([x[0], x[1], x[2], y[0], y[1]]);
        for step in 1..=MAX_NEWTON_STEPS {
            let free: Vec<bool> = (0..3)
                .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
                .collect();
            let mut h = self.hessian(x);
            let mut rhs = Vector3::zeros();
            for i in 0..3 {
                if free[i] {
                    rhs[i] = -g[i];
                } else {
                    for k in 0..3 {
                        h[(i, k)] = 0.0;
                        h[(k, i)] = 0.0;
                    }
                    h[(i, i)] = 1.0;
                }
            }
            let scale = (0..3).map(|i| h[(i, i)].abs()).fold(1e-12, f64::max);
            let mut shift = 0.0;
            let dir = loop {
                let shifted = h + Matrix3::identity() * shift;
                if let Some(chol) = Cholesky::new(shifted) {
                    break chol.solve(&rhs);
                }
                shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
            };

            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut cand = [0.0; 3];
                for i in 0..3 {
                    cand[i] = (x[i] + alpha * dir[i]).clamp(lo[i], hi[i]);
                }
                // fraction to boundary keeps ρ₁ away from zero
                cand[2] = cand[2].max(0.5 * x[2]);
                let (cv, cg, cy) = self.eval(cand);
                let decrease: f64 = (0..3).map(|i| g[i] * (cand[i] - x[i])).sum();
                if cv <= v + 1e-4 * decrease || (cv - v).abs() <= 1e-15 * v.abs().max(1.0) {
                    accepted = Some((cand, cv, cg, cy));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((cand, cv, cg, cy)) = accepted else {
                return Err(Error::AsymptoticNonConvergence {
                    message: format!("line search failed at step {step}"),
                    trace: trace.clone(),
                });
            };
            let moved = (0..3).map(|i| (cand[i] - x[i]).abs()).fold(0.0, f64::max);
            x = cand;
            v = cv;
            g = cg;
            y = cy;
            trace.push([x[0], x[1], x[2], y[0], y[1]]);
            if moved < STEP_TOL {
                let stationary = (0..3).all(|i| {
                    let blocked = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
                    blocked || g[i].abs() <= GRAD_TOL
                });
                if !stationary {
                    return Err(Error::AsymptoticNonConvergence {
                        message: format!("stalled with gradient {g:?}"),
                        trace: trace.clone(),
                    });
                }
                return Ok((x, y, v, step));
            }
        }
        Err(Error::AsymptoticNonConvergence {
            message: format!("no convergence in {MAX_NEWTON_STEPS} Newton steps"),
            trace: trace.clone(),
        })
    }
}

fn pinned(x: [f64; 3], y: [f64; 2], b: &Bounds) -> bool {
    x[0].abs() >= b.beta0 * (1.0 - PIN_SLACK)
        || x[1] >= b.m_u * (1.0 - PIN_SLACK)
        || x[2] >= b.rho1 * (1.0 - PIN_SLACK)
        || y[1] >= b.rho2 * (1.0 - PIN_SLACK)
}

/// Saddle point of the program.
pub fn solve_asymptotic(problem: &AsymptoticProblem) -> Result<AsymptoticSolution> {
    problem.validate()?;
    let mut bounds = problem.bounds;
    let mut trace = Vec::new();
    let q = problem.sigma_eps * std_quantile(problem.tau);
    for attempt in 0..=MAX_WIDENINGS {
        let newton = Newton { pb: problem, bounds };
        let m_u0 = (0.5 * problem.beta_second_moment.sqrt()).clamp(0.1, bounds.m_u * 0.5);
        let start = [
            q.clamp(-0.5 * bounds.beta0, 0.5 * bounds.beta0),
            m_u0,
            (problem.gamma.sqrt() * m_u0).clamp(1e-3, 0.5 * bounds.rho1),
        ];
        let (x, y, value, steps) = newton.run(start, &mut trace)?;
        if pinned(x, y, &bounds) {
            if attempt == MAX_WIDENINGS {
                return Err(Error::AsymptoticNonConvergence {
                    message: "solution pins the box after widening".into(),
                    trace,
                });
            }
            warn!("asymptotic solution pins a box edge; widening bounds");
            bounds = bounds.widened();
            continue;
        }
        let [beta0, m_u, rho1] = x;
        let s = (m_u * m_u + problem.sigma_eps * problem.sigma_eps).sqrt();
        return Ok(AsymptoticSolution {
            beta0_star: beta0,
            m_u_star: m_u,
            rho1_star: rho1,
            m_eta_star: y[0],
            rho2_star: y[1],
            objective_value: value,
            predicted_coverage: std_cdf(beta0 / s),
            degenerate: m_u < DEGENERATE_M_U,
            newton_steps: steps,
        });
    }
    unreachable!("loop returns on its last attempt")
}

/// Limits of β̂₀ and ‖β̂ − β̃‖₂.
pub fn predicted_primal_limits(solution: &AsymptoticSolution) -> (f64, f64) {
    (solution.beta0_star, solution.m_u_star)
}

/// Law of clamp(W/r, −(1−τ), τ), the limiting empirical distribution of the
/// fitted duals. In the degenerate case only the two edge atoms remain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualLaw {
    pub tau: f64,
    w: Gaussian,
    r: f64,
    degenerate: bool,
}

pub fn limiting_dual_law(solution: &AsymptoticSolution, problem: &AsymptoticProblem) -> Result<DualLaw> {
    let s = solution;
    let finite = [s.beta0_star, s.m_u_star, s.rho1_star, s.m_eta_star].iter().all(|v| v.is_finite());
    if !finite || s.m_u_star < 0.0 || s.m_eta_star <= 0.0 || (!s.degenerate && s.rho1_star <= 0.0) {
        return Err(Error::domain("solution is not a converged saddle point"));
    }
    Ok(DualLaw {
        tau: problem.tau,
        w: problem.w_law(s.beta0_star, s.m_u_star),
        r: s.rho1_star / s.m_eta_star,
        degenerate: s.degenerate,
    })
}

impl DualLaw {
    pub fn lower_edge(&self) -> f64 {
        -(1.0 - self.tau)
    }

    /// Mass at −(1−τ).
    pub fn lower_mass(&self) -> f64 {
        if self.degenerate {
            self.w.cdf(0.0)
        } else {
            self.w.cdf(-self.r * (1.0 - self.tau))
        }
    }

    /// Mass at τ.
    pub fn upper_mass(&self) -> f64 {
        if self.degenerate {
            1.0 - self.w.cdf(0.0)
        } else {
            1.0 - self.w.cdf(self.r * self.tau)
        }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z < self.lower_edge() {
            0.0
        } else if z >= self.tau {
            1.0
        } else if self.degenerate {
            self.lower_mass()
        } else {
            self.w.cdf(self.r * z)
        }
    }

    /// Density of the continuous part on (−(1−τ), τ).
    pub fn density(&self, z: f64) -> f64 {
        if self.degenerate || z <= self.lower_edge() || z >= self.tau {
            return 0.0;
        }
        let sd = self.w.sd;
        self.r / sd * std_pdf((self.r * z - self.w.mean) / sd)
    }

    /// inf{z : cdf(z) ≥ level}.
    pub fn quantile(&self, level: f64) -> f64 {
        if level <= self.lower_mass() {
            return self.lower_edge();
        }
        if level >= 1.0 || self.degenerate {
            return self.tau;
        }
        let z = (self.w.mean + self.w.sd * std_quantile(level)) / self.r;
        z.min(self.tau)
    }

    /// P(Z ≤ 0), the limiting leave-one-out coverage.
    pub fn prob_nonpositive(&self) -> f64 {
        self.w.cdf(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let w = self.w.mean + self.w.sd * rng.sample::<f64, _>(StandardNormal);
        if self.degenerate {
            return if w <= 0.0 { self.lower_edge() } else { self.tau };
        }
        (w / self.r).clamp(self.lower_edge(), self.tau)
    }
}
