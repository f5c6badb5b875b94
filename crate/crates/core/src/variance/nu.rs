use super::CovarianceSet;
use crate::error::{Error, Result};

/// Inputs of `ν_k` for one block index.
#[derive(Clone, Copy)]
pub struct NuInputs<'a> {
    pub m: usize,
    /// `γ_i` at lags `0, 1, …`; must reach the certified horizon.
    pub gamma: &'a [f64],
    /// `γ̃_{k,i}` at lags `0 ..= m`.
    pub gamma_tilde: &'a [f64],
    /// Bounds on `|γ_i|` beyond the supplied lags: `tail_bound(h)` must bound
    /// `Σ_{i ≥ h} |γ_i|`.
    pub tail_bound: &'a dyn Fn(usize) -> Result<f64>,
}

/// Relative size of the neglected covariance tail, as a fraction of `σ²`.
pub const TAIL_TOLERANCE: f64 = 1e-3;

/// `ν_k = σ² + (γ̃_0 − γ_0) + 2 Σ_{i=1}^{m} (γ̃_i − γ_i) − 2 Σ_{i>m} γ_i`.
///
/// Negative lags are folded onto positive ones, so lag 0 has weight 1 and
/// every other lag weight 2. The sum over `i > m` runs over all supplied
/// lags; the remainder past them must be certified below
/// `TAIL_TOLERANCE · σ²`.
pub fn nu_k(sigma2: f64, inp: &NuInputs) -> Result<f64> {
    let m = inp.m;
    if inp.gamma_tilde.len() < m + 1 || inp.gamma.len() < m + 1 {
        return Err(Error::invalid(format!("covariances must cover lags 0..={m}")));
    }
    let target = TAIL_TOLERANCE * sigma2.abs();
    let remainder = (inp.tail_bound)(inp.gamma.len())?;
    if remainder > target {
        return Err(Error::TailTruncation {
            bound: remainder,
            target,
        });
    }
    let near: f64 = (inp.gamma_tilde[0] - inp.gamma[0])
        + 2.0
            * (1..=m)
                .map(|i| inp.gamma_tilde[i] - inp.gamma[i])
                .sum::<f64>();
    let far: f64 = inp.gamma[m + 1..].iter().sum();
    Ok(sigma2 + near - 2.0 * far)
}

/// `ν_k` from one covariance set, taking `γ` from its plain and `γ̃` from its
/// `m_k`-dependent autocovariances so that the two share trajectories.
pub fn nu_from_set(sigma2: f64, set: &CovarianceSet, tail_bound: &dyn Fn(usize) -> Result<f64>) -> Result<f64> {
    let gamma = set.plain.contiguous();
    let gamma_tilde = set.tilde.contiguous();
    nu_k(
        sigma2,
        &NuInputs {
            m: set.m,
            gamma: &gamma,
            gamma_tilde: &gamma_tilde,
            tail_bound,
        },
    )
}

/// Smallest horizon `h > m` with `tail_bound(h) ≤ TAIL_TOLERANCE · σ²`.
pub fn certified_horizon(sigma2: f64, m: usize, tail_bound: &dyn Fn(usize) -> Result<f64>, cap: usize) -> Result<usize> {
    let target = TAIL_TOLERANCE * sigma2.abs();
    let mut last = f64::INFINITY;
    for h in (m + 1)..=cap {
        last = tail_bound(h)?;
        if last <= target {
            return Ok(h);
        }
    }
    Err(Error::TailTruncation { bound: last, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometric(len: usize) -> Vec<f64> {
        (0..len).map(|i| 4.0 / 3.0 * 0.5f64.powi(i as i32)).collect()
    }

    #[test]
    fn exact_geometric_inputs() {
        let gamma = geometric(80);
        let sigma2 = 4.0;
        let tail = |h: usize| Ok(8.0 / 3.0 * 0.5f64.powi(h as i32));
        for m in [1usize, 3, 7, 12] {
            let inp = NuInputs {
                m,
                gamma: &gamma,
                gamma_tilde: &gamma[..=m],
                tail_bound: &tail,
            };
            let want = sigma2 - 2.0 * (4.0 / 3.0) * 0.5f64.powi(m as i32);
            assert!((nu_k(sigma2, &inp).unwrap() - want).abs() < 1e-12, "m {m}");
        }
    }

    #[test]
    fn iid_inputs_give_gamma0() {
        let gamma = [1.7, 0.0, 0.0, 0.0, 0.0];
        let zero = |_: usize| Ok(0.0);
        for m in 0..4 {
            let inp = NuInputs {
                m,
                gamma: &gamma,
                gamma_tilde: &gamma[..=m],
                tail_bound: &zero,
            };
            assert_eq!(nu_k(1.7, &inp).unwrap(), 1.7);
        }
    }

    #[test]
    fn uncertified_tail_is_an_error() {
        let gamma = geometric(5);
        let tail = |h: usize| Ok(8.0 / 3.0 * 0.5f64.powi(h as i32));
        let inp = NuInputs {
            m: 2,
            gamma: &gamma,
            gamma_tilde: &gamma[..3],
            tail_bound: &tail,
        };
        assert!(matches!(nu_k(4.0, &inp), Err(Error::TailTruncation { .. })));
        assert_eq!(certified_horizon(4.0, 2, &tail, 100).unwrap(), 10);
    }
}
