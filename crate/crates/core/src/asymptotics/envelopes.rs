//! Moreau envelopes of the scalar regularizers ν and their conjugates.
//! For 𝓡_d = dλ‖β‖², ν(b) = λγb²; for 𝓡_d = √d λ‖β‖₁, ν(b) = λ√γ|b|.

/// e_ν(x; ρ) = λγx² / (1 + 2λγρ)
pub fn l2_envelope(x: f64, rho: f64, lambda: f64, gamma: f64) -> f64 {
    let k = lambda * gamma;
    k * x * x / (1.0 + 2.0 * k * rho)
}

/// e_{ν*}(x; ρ) = x² / (4λγ + 2ρ)
pub fn l2_conjugate_envelope(x: f64, rho: f64, lambda: f64, gamma: f64) -> f64 {
    x * x / (4.0 * lambda * gamma + 2.0 * rho)
}

/// Huber-type envelope of λ√γ|b|.
pub fn l1_envelope(x: f64, rho: f64, lambda: f64, gamma: f64) -> f64 {
    let k = lambda * gamma.sqrt();
    if x > k * rho {
        k * x - 0.5 * k * k * rho
    } else if x < -k * rho {
        -k * x - 0.5 * k * k * rho
    } else {
        x * x / (2.0 * rho)
    }
}

/// Envelope of the indicator of [−λ√γ, λ√γ].
pub fn l1_conjugate_envelope(x: f64, rho: f64, lambda: f64, gamma: f64) -> f64 {
    let k = lambda * gamma.sqrt();
    let excess = (x.abs() - k).max(0.0);
    excess * excess / (2.0 * rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn l2_envelope_identity(x in -20.0f64..20.0, rho in 0.01f64..10.0, lambda in 0.0f64..5.0, gamma in 0.01f64..0.6) {
            let lhs = l2_envelope(x, rho, lambda, gamma) + l2_conjugate_envelope(x / rho, 1.0 / rho, lambda, gamma);
            prop_assert!((lhs - x * x / (2.0 * rho)).abs() <= 1e-10 * (1.0 + x * x / rho));
        }

        #[test]
        fn l1_envelope_identity(x in -20.0f64..20.0, rho in 0.01f64..10.0, lambda in 0.0f64..5.0, gamma in 0.01f64..0.6) {
            let lhs = l1_envelope(x, rho, lambda, gamma) + l1_conjugate_envelope(x / rho, 1.0 / rho, lambda, gamma);
            prop_assert!((lhs - x * x / (2.0 * rho)).abs() <= 1e-10 * (1.0 + x * x / rho));
        }
    }
}
