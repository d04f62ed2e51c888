//! Closed-form solutions of the two benchmark problems.
//!
//! Both use the generator `f = y + E[Y_t] + E[Z_t]` with `B_0 = 0`. With
//! `φ = e^{T-t}`:
//!
//! * `g(x) = x`: `Y_t = φ (B_t + φ - 1)`, `Z_t = φ`.
//! * `g(x) = x^2 ∧ K`: `E[Z_t] = 0` by symmetry and
//!   `Y_t = φ (m(t, B_t) + m(0, 0) (φ - 1))` with
//!   `m(t, b) = E[(b + sqrt(T - t) G)^2 ∧ K]`, `G ~ N(0, 1)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function via `erfc`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)`, without cancellation for large `x`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `P(a < G < b)` for `a <= b`, evaluated on the side of the smaller tails.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b < 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    }
}

/// `E[(x + sqrt(s) G)^2 ∧ K]` for `G ~ N(0, 1)`.
///
/// With cut points `a, b = (∓sqrt K - x) / sqrt s`, the square is integrated
/// in closed form on `(a, b)` using `∫ G φ = φ(a) - φ(b)` and
/// `∫ G^2 φ = P(a < G < b) + a φ(a) - b φ(b)`; outside it equals `K`.
pub fn truncated_square_moment(x: f64, s: f64, cap: f64) -> f64 {
    if s <= 0.0 {
        return (x * x).min(cap);
    }
    let rs = s.sqrt();
    let rk = cap.sqrt();
    let a = (-rk - x) / rs;
    let b = (rk - x) / rs;
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let inside_mass = normal_mass(a, b);
    let outside_mass = normal_cdf(a) + normal_sf(b);
    let inside = (x * x + s) * inside_mass + 2.0 * x * rs * (pa - pb) + s * (a * pa - b * pb);
    (inside + cap * outside_mass).clamp(0.0, cap)
}

/// `d/dx E[(x + sqrt(s) G)^2 ∧ K] = E[2 (x + sqrt(s) G) 1{|x + sqrt(s) G| < sqrt K}]`.
pub fn truncated_square_moment_dx(x: f64, s: f64, cap: f64) -> f64 {
    if s <= 0.0 {
        return if x * x < cap { 2.0 * x } else { 0.0 };
    }
    let rs = s.sqrt();
    let rk = cap.sqrt();
    let a = (-rk - x) / rs;
    let b = (rk - x) / rs;
    2.0 * x * normal_mass(a, b) + 2.0 * rs * (normal_pdf(a) - normal_pdf(b))
}

/// Which benchmark an [`ExactSolution`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Benchmark {
    Identity,
    CappedSquare { cap: f64 },
}

/// Exact `(Y, Z)` of a benchmark as functions of `(t, B_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolution {
    horizon: f64,
    case: Benchmark,
    mean_terminal: f64,
}

impl ExactSolution {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn case(&self) -> Benchmark {
        self.case
    }

    pub fn y(&self, t: f64, b: f64) -> f64 {
        let phi = (self.horizon - t).exp();
        match self.case {
            Benchmark::Identity => phi * (b + phi - 1.0),
            Benchmark::CappedSquare { cap } => {
                let m = truncated_square_moment(b, self.horizon - t, cap);
                phi * (m + self.mean_terminal * (phi - 1.0))
            }
        }
    }

    /// `Z_t = ∂_b Y(t, b)`; for the capped case this is `φ ∂_b m(t, b)`.
    pub fn z(&self, t: f64, b: f64) -> Option<f64> {
        let phi = (self.horizon - t).exp();
        match self.case {
            Benchmark::Identity => Some(phi),
            Benchmark::CappedSquare { cap } => {
                Some(phi * truncated_square_moment_dx(b, self.horizon - t, cap))
            }
        }
    }

    /// `E[Y_t]` under `B_0 = 0`.
    pub fn mean_y(&self, t: f64) -> f64 {
        let phi = (self.horizon - t).exp();
        match self.case {
            Benchmark::Identity => phi * (phi - 1.0),
            Benchmark::CappedSquare { .. } => phi * phi * self.mean_terminal,
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Parameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    Ok(())
}

pub fn case1_exact(horizon: f64) -> Result<ExactSolution> {
    check_horizon(horizon)?;
    Ok(ExactSolution {
        horizon,
        case: Benchmark::Identity,
        mean_terminal: 0.0,
    })
}

pub fn case2_exact(horizon: f64, cap: f64) -> Result<ExactSolution> {
    check_horizon(horizon)?;
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::Parameter(format!(
            "cap K must be positive, got {cap}"
        )));
    }
    Ok(ExactSolution {
        horizon,
        case: Benchmark::CappedSquare { cap },
        mean_terminal: truncated_square_moment(0.0, horizon, cap),
    })
}
