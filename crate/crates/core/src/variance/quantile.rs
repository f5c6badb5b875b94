//! Covariance bounds from the quantile envelope `Q(u) ≤ b(1 − log u)^{1/γ₂}`
//! of `|X|`.

use crate::error::{Error, Result};

/// Absolute accuracy requested from the quadrature, relative to the scale
/// of each integral.
const REL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileEnvelope {
    pub b: f64,
    pub gamma2: f64,
}

impl QuantileEnvelope {
    pub fn new(b: f64, gamma2: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) || !(gamma2 > 0.0) {
            return Err(Error::invalid("envelope needs b > 0 finite and gamma2 > 0"));
        }
        Ok(QuantileEnvelope { b, gamma2 })
    }

    pub fn q(&self, u: f64) -> f64 {
        if self.gamma2.is_infinite() {
            self.b
        } else {
            self.b * (1.0 - u.ln()).powf(1.0 / self.gamma2)
        }
    }

    /// `∫₀^v Q^p(u) du` for `v ∈ [0, 1]`, integrated as `v ∫₀¹ Q^p(v t) dt`.
    fn integral_pow(&self, v: f64, p: i32, tol: f64) -> Result<f64> {
        let v = v.clamp(0.0, 1.0);
        if v == 0.0 {
            return Ok(0.0);
        }
        if self.gamma2.is_infinite() {
            return Ok(v * self.b.powi(p));
        }
        let scale = self.q(v).powi(p);
        let out = quadrature::double_exponential::integrate(
            |t| if t <= 0.0 { 0.0 } else { self.q(v * t).powi(p) },
            0.0,
            1.0,
            tol * scale,
        );
        if !out.integral.is_finite() || out.error_estimate > 1e3 * tol * scale.max(out.integral) {
            return Err(Error::numerical(
                "variance",
                "quantile_bounds",
                format!("quadrature error estimate {:e} at v = {v:e}", out.error_estimate),
            ));
        }
        Ok(v * out.integral)
    }

    /// `H(v) = ∫₀^v Q(u) du`.
    pub fn h(&self, v: f64) -> Result<f64> {
        self.integral_pow(v, 1, REL_TOL)
    }

    /// `2 ∫₀^{H(δ)} Q²(u) du`, a bound on `|cov(X₀, X_i)|` when `δ = δ(i)`.
    pub fn lag_bound(&self, delta: f64) -> Result<f64> {
        Ok(2.0 * self.integral_pow(self.h(delta)?, 2, REL_TOL)?)
    }

    /// Same bound at a looser tolerance, for cross-checks.
    pub fn lag_bound_with_tol(&self, delta: f64, tol: f64) -> Result<f64> {
        Ok(2.0 * self.integral_pow(self.integral_pow(delta, 1, tol)?, 2, tol)?)
    }

    /// `4 ∫₀¹ Q(u)(Q(u) − M)₊ du`, a bound on the change of a covariance
    /// when `X` is clipped at `±M`.
    pub fn truncation_gap(&self, m: f64) -> Result<f64> {
        if self.gamma2.is_infinite() {
            return Ok(if m >= self.b { 0.0 } else { 4.0 * self.b * (self.b - m) });
        }
        let m = m.max(0.0);
        // Q(u) > M exactly when u < u*
        let u_star = (1.0 - (m / self.b).powf(self.gamma2)).exp().min(1.0);
        if u_star == 0.0 {
            return Ok(0.0);
        }
        let scale = self.q(u_star).powi(2).max(f64::MIN_POSITIVE);
        let out = quadrature::double_exponential::integrate(
            |t| {
                if t <= 0.0 {
                    return 0.0;
                }
                let q = self.q(u_star * t);
                q * (q - m).max(0.0)
            },
            0.0,
            1.0,
            REL_TOL * scale,
        );
        if !out.integral.is_finite() {
            return Err(Error::numerical("variance", "truncation_gap", "quadrature diverged"));
        }
        Ok(4.0 * u_star * out.integral)
    }
}

/// Per-lag covariance bounds `2∫₀^{H(δ(i))} Q²` for a series of coupling
/// coefficients.
pub fn quantile_bounds(b: f64, gamma2: f64, delta_series: &[f64]) -> Result<Vec<f64>> {
    let env = QuantileEnvelope::new(b, gamma2)?;
    delta_series.iter().map(|&d| env.lag_bound(d.max(0.0))).collect()
}

/// `Σ_{i ≥ from} bound(δ(i))` for `δ(i) = exp(−c i^{γ₁})`, summed until the
/// terms stop mattering at double precision.
pub fn decay_tail_sum(env: &QuantileEnvelope, c: f64, gamma1: f64, from: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut i = from.max(1);
    loop {
        let delta = (-c * (i as f64).powf(gamma1)).exp();
        let term = env.lag_bound(delta)?;
        total += term;
        if term <= 1e-17 * total || term == 0.0 || i > from + 1_000_000 {
            return Ok(total);
        }
        i += 1;
    }
}
