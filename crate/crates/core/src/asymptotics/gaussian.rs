//! Closed-form expectations of pinball envelope quantities under a Gaussian.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn std_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    // two Newton polishes; the series above is only good to ~1e-9
    for _ in 0..2 {
        let dens = std_pdf(z);
        if dens > 0.0 {
            z -= (std_cdf(z) - p) / dens;
        }
    }
    z
}

/// W ~ N(mean, sd²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

/// (P, E[W;·], E[W²;·]) restricted to a set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Partial {
    pub p: f64,
    pub m1: f64,
    pub m2: f64,
}

impl std::ops::Sub for Partial {
    type Output = Partial;
    fn sub(self, o: Partial) -> Partial {
        Partial {
            p: self.p - o.p,
            m1: self.m1 - o.m1,
            m2: self.m2 - o.m2,
        }
    }
}

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Gaussian {
        Gaussian { mean, sd }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.sd == 0.0 {
            return if t >= self.mean { 1.0 } else { 0.0 };
        }
        std_cdf((t - self.mean) / self.sd)
    }

    /// Moments over {W ≤ t}.
    pub fn below(&self, t: f64) -> Partial {
        let (mu, s) = (self.mean, self.sd);
        if s == 0.0 {
            return if t >= mu {
                Partial { p: 1.0, m1: mu, m2: mu * mu }
            } else {
                Partial::default()
            };
        }
        if t == f64::INFINITY {
            return Partial { p: 1.0, m1: mu, m2: mu * mu + s * s };
        }
        if t == f64::NEG_INFINITY {
            return Partial::default();
        }
        let z = (t - mu) / s;
        let cdf = std_cdf(z);
        let pdf = std_pdf(z);
        Partial {
            p: cdf,
            m1: mu * cdf - s * pdf,
            m2: (mu * mu + s * s) * cdf - s * pdf * (mu + t),
        }
    }

    /// Moments over {W > t}.
    pub fn above(&self, t: f64) -> Partial {
        self.below(f64::INFINITY) - self.below(t)
    }
}

/// Expectations of envelope quantities for the pinball loss at scale r > 0
/// under W. The clipped residual is c(W) = W − prox(W; r), which lies in
/// [−r(1−τ), rτ].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeMoments {
    /// E[e_ℓ(W; r)]
    pub envelope: f64,
    /// E[c(W)/r] = E[clamp(W/r, −(1−τ), τ)]
    pub clipped_mean: f64,
    /// E[c(W)²]
    pub clipped_sq: f64,
    /// P(−r(1−τ) ≤ W ≤ rτ)
    pub mid_prob: f64,
}

pub fn envelope_moments(w: Gaussian, r: f64, tau: f64) -> EnvelopeMoments {
    let hi = r * tau;
    let lo = -r * (1.0 - tau);
    let upper = w.above(hi);
    let lower = w.below(lo);
    let mid = w.below(hi) - lower;
    let s = 1.0 - tau;
    if r == 0.0 {
        return EnvelopeMoments {
            envelope: tau * upper.m1 - s * lower.m1,
            clipped_mean: tau * upper.p - s * lower.p,
            clipped_sq: 0.0,
            mid_prob: 0.0,
        };
    }
    let envelope = tau * upper.m1 - 0.5 * r * tau * tau * upper.p + mid.m2 / (2.0 * r)
        - s * lower.m1
        - 0.5 * r * s * s * lower.p;
    EnvelopeMoments {
        envelope,
        clipped_mean: tau * upper.p - s * lower.p + mid.m1 / r,
        clipped_sq: hi * hi * upper.p + lo * lo * lower.p + mid.m2,
        mid_prob: mid.p,
    }
}
