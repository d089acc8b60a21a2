use crate::error::{Error, Result};

/// ℓ_τ(r) = τr − min{r, 0}.
#[inline]
pub fn pinball_loss(r: f64, tau: f64) -> f64 {
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

#[inline]
pub(crate) fn prox_unchecked(x: f64, rho: f64, tau: f64) -> f64 {
    if x > rho * tau {
        x - rho * tau
    } else if x < -rho * (1.0 - tau) {
        x + rho * (1.0 - tau)
    } else {
        0.0
    }
}

/// Proximal map of the pinball loss: argmin_v (v − x)²/(2ρ) + ℓ_τ(v).
pub fn pinball_prox(x: f64, rho: f64, tau: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!("prox scale must be > 0, got {rho}")));
    }
    if !x.is_finite() || !rho.is_finite() {
        return Err(Error::domain("non-finite prox argument"));
    }
    Ok(prox_unchecked(x, rho, tau))
}

#[inline]
pub(crate) fn envelope_unchecked(x: f64, rho: f64, tau: f64) -> f64 {
    if rho == 0.0 {
        return pinball_loss(x, tau);
    }
    if x > rho * tau {
        0.5 * tau * tau * rho + tau * (x - rho * tau)
    } else if x < -rho * (1.0 - tau) {
        let s = 1.0 - tau;
        0.5 * s * s * rho - s * (x + rho * s)
    } else {
        x * x / (2.0 * rho)
    }
}

/// Moreau envelope of the pinball loss, min_v (v − x)²/(2ρ) + ℓ_τ(v).
/// At ρ = 0 this is the loss itself.
pub fn pinball_envelope(x: f64, rho: f64, tau: f64) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() || !x.is_finite() {
        return Err(Error::domain(format!("invalid envelope arguments x={x}, rho={rho}")));
    }
    Ok(envelope_unchecked(x, rho, tau))
}

/// Envelope of the conjugate ℓ_τ*, the indicator of [−(1−τ), τ]:
/// dist(z, box)² / (2t).
pub fn pinball_conjugate_envelope(z: f64, t: f64, tau: f64) -> f64 {
    let dist = if z > tau {
        z - tau
    } else if z < -(1.0 - tau) {
        -(1.0 - tau) - z
    } else {
        0.0
    };
    dist * dist / (2.0 * t)
}
