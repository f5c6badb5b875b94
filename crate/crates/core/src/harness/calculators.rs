use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArIndices {
    pub gamma1: f64,
    /// `f64::INFINITY` for bounded observables (`ζ = 0`).
    pub gamma2: f64,
    pub lambda: f64,
    pub rate_power: f64,
}

/// Indices of the Lipschitz autoregressive model with innovation tail index
/// `η`, drift exponent `τ` and observable growth `ζ`.
pub fn ar_index_calculator(eta: f64, tau: f64, zeta: f64) -> Result<ArIndices> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0, 1], got {eta}")));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1), got {tau}")));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::invalid(format!("zeta must lie in [0, 1], got {zeta}")));
    }
    if tau + zeta <= 0.0 {
        return Err(Error::invalid("tau + zeta must be positive"));
    }
    let e = eta * (1.0 - tau);
    let gamma1 = e / (e + tau);
    let gamma2 = if zeta == 0.0 { f64::INFINITY } else { e / zeta };
    let lambda = 1.0 / gamma1 + 1.0 / gamma2;
    Ok(ArIndices {
        gamma1,
        gamma2,
        lambda,
        rate_power: 1.0 + lambda,
    })
}

/// Power of `log n` in the rate for matrix cocycles with moment index `γ`;
/// `γ = ∞` is the compact-support limit.
pub fn matrix_rate_calculator(gamma: f64, super_exponential: bool) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if gamma.is_infinite() {
        return Ok(2.0);
    }
    Ok(if super_exponential || gamma > 1.0 {
        2.0 + 1.0 / gamma
    } else {
        1.0 + 2.0 / gamma
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ar_examples() {
        let a = ar_index_calculator(1.0, 0.0, 1.0).unwrap();
        assert_eq!((a.gamma1, a.gamma2, a.rate_power), (1.0, 1.0, 3.0));
        let b = ar_index_calculator(1.0, 0.5, 0.5).unwrap();
        assert_eq!((b.gamma1, b.gamma2, b.rate_power), (0.5, 1.0, 4.0));
        let c = ar_index_calculator(0.5, 0.5, 0.0).unwrap();
        assert!(c.gamma2.is_infinite());
        assert_eq!(c.lambda, 1.0 / c.gamma1);
        assert!(ar_index_calculator(1.0, 0.0, 0.0).is_err());
        assert!(ar_index_calculator(0.0, 0.5, 0.5).is_err());
    }

    #[test]
    fn matrix_examples() {
        assert_eq!(matrix_rate_calculator(1.0, false).unwrap(), 3.0);
        assert_eq!(matrix_rate_calculator(0.5, false).unwrap(), 5.0);
        assert_eq!(matrix_rate_calculator(2.0, false).unwrap(), 2.5);
        assert_eq!(matrix_rate_calculator(f64::INFINITY, false).unwrap(), 2.0);
        assert!((matrix_rate_calculator(1e12, false).unwrap() - 2.0).abs() < 1e-11);
        assert!(matrix_rate_calculator(0.0, false).is_err());
    }
}
