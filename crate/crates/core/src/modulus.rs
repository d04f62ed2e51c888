//! Logarithmic moduli `Φ_β`, the modified Hölder modulus `|x|_(ε,β)` and the
//! concave majorant `Ψ_β` of the squared half-exponent modulus.

use crate::error::{Error, Result};
use crate::quadrature;

/// `β ∈ {0} ∪ (1/2, ∞)` and `ε ∈ (0, 1]`, with the knot `r_β = e^{-2β}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusParams {
    beta: f64,
    epsilon: f64,
    r_beta: f64,
}

impl ModulusParams {
    pub fn new(beta: f64, epsilon: f64) -> Result<Self> {
        if !(beta == 0.0 || beta > 0.5) || !beta.is_finite() {
            return Err(Error::Parameter(format!(
                "beta must be 0 or > 1/2, got {beta}"
            )));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Parameter(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        Ok(Self {
            beta,
            epsilon,
            r_beta: (-2.0 * beta).exp(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn r_beta(&self) -> f64 {
        self.r_beta
    }

    /// `κ_β = 2^β`.
    pub fn kappa(&self) -> f64 {
        2f64.powf(self.beta)
    }

    /// `Φ_β(r) = (ln 1/(r ∧ r_β))^β`, and `Φ_0 ≡ 1`.
    pub fn phi(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("phi requires r > 0, got {r}")));
        }
        Ok(self.phi_unchecked(r))
    }

    fn phi_unchecked(&self, r: f64) -> f64 {
        if self.beta == 0.0 {
            return 1.0;
        }
        if r >= self.r_beta {
            (2.0 * self.beta).powf(self.beta)
        } else {
            (-r.ln()).powf(self.beta)
        }
    }

    /// `|x|_(ε,β) = |x|^ε Φ_β(|x|^{2ε})`, extended by 0 at the origin.
    pub fn psi_mod(&self, x: f64) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            return 0.0;
        }
        a.powf(self.epsilon) * self.phi_unchecked(a.powf(2.0 * self.epsilon))
    }

    /// Square of the half-exponent modulus, `r Φ_β(r)^2` for `r >= 0`.
    pub fn half_modulus_sq(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let p = self.phi_unchecked(r);
        r * p * p
    }

    /// Concave majorant `Ψ_β`: equal to `r Φ_β(r)^2` up to `r_β^2`, then the
    /// tangent line at that knot.
    pub fn psi_concave(&self, r: f64) -> f64 {
        if self.beta == 0.0 {
            return r.max(0.0);
        }
        let knot = self.r_beta * self.r_beta;
        if r <= knot {
            return self.half_modulus_sq(r);
        }
        // d/dr r (ln 1/r)^{2β} = L^{2β-1} (L - 2β), with L = ln(1/knot) = 4β
        let l = 4.0 * self.beta;
        let slope = l.powf(2.0 * self.beta - 1.0) * (l - 2.0 * self.beta);
        slope * (r - knot) + self.half_modulus_sq(knot)
    }

    /// `∫_cutoff^T ds / (s Φ_β(s^ε)^2)` by adaptive quadrature on log panels.
    pub fn integrability_integral(&self, horizon: f64, cutoff: f64) -> Result<f64> {
        if !(cutoff > 0.0 && horizon > cutoff) {
            return Err(Error::Parameter(format!(
                "need 0 < cutoff < T, got cutoff {cutoff}, T {horizon}"
            )));
        }
        Ok(quadrature::integrate_log_panels(
            |s| {
                let p = self.phi_unchecked(s.powf(self.epsilon));
                1.0 / (s * p * p)
            },
            cutoff,
            horizon,
            1e-12,
        ))
    }
}
