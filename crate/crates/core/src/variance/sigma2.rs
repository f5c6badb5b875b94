use rayon::prelude::*;

use super::Autocov;
use crate::error::{Error, Result};
use crate::models::{simulate_trajectory, stationary_sample, InnovationStream, MarkovModel};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMethod {
    ScaledPartialSum,
    CovarianceSum,
}

/// Long-run variance `σ² = lim n⁻¹ E S_n²`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub method: VarianceMethod,
    /// Coefficient of `1/n` in the extrapolation.
    pub beta: f64,
    /// `(n, Var(S_n)/n, stderr)`.
    pub per_n: Vec<(usize, f64, f64)>,
    /// `γ̂_0 + 2 Σ γ̂_i`, when covariances were supplied.
    pub cross_check: Option<f64>,
    pub warning: Option<String>,
    /// `(k, ν̂_k)` when computed.
    pub nu_k: Vec<(u32, f64)>,
}

/// `γ̂_0 + 2 Σ_{i≥1} γ̂_i` over a contiguous lag grid starting at 0.
pub fn covariance_sum(a: &Autocov) -> f64 {
    let g = a.contiguous();
    match g.split_first() {
        Some((g0, rest)) => g0 + 2.0 * rest.iter().sum::<f64>(),
        None => 0.0,
    }
}

/// Ensemble `Var(S_n)/n` on `n_grid`, extrapolated with
/// `Var(S_n)/n = σ² + β/n`.
pub fn sigma2_estimate<M: MarkovModel>(
    model: &M,
    n_grid: &[usize],
    replicates: usize,
    stream: &InnovationStream,
    covariances: Option<&Autocov>,
) -> Result<VarianceEstimate> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::invalid("n grid must be positive and strictly increasing"));
    }
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    let horizon = *n_grid.last().unwrap();
    let burn = model.default_burn_in();
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.child(r);
            let w0 = stationary_sample(model, burn, &mut s.fork("start"));
            let (t, _) = simulate_trajectory(model, w0, horizon, &mut s.fork("path"));
            n_grid.iter().map(|&n| t.s[n - 1]).collect()
        })
        .collect();
    let per_n: Vec<(usize, f64, f64)> = n_grid
        .iter()
        .enumerate()
        .map(|(p, &n)| {
            let col: Vec<f64> = rows.iter().map(|r| r[p]).collect();
            let (v, _) = stats::covariance_stderr(&col, &col);
            // standard error of a variance from the spread of squared deviations
            let m = stats::mean(&col);
            let sq: Vec<f64> = col.iter().map(|x| (x - m) * (x - m)).collect();
            let se = (stats::variance(&sq) / col.len() as f64).sqrt();
            (n, v / n as f64, se / n as f64)
        })
        .collect();
    let (sigma2, beta) = if per_n.len() == 1 {
        (per_n[0].1, 0.0)
    } else {
        let xs: Vec<f64> = per_n.iter().map(|p| 1.0 / p.0 as f64).collect();
        let ys: Vec<f64> = per_n.iter().map(|p| p.1).collect();
        let line = stats::fit_line(&xs, &ys).ok_or_else(|| Error::invalid("degenerate n grid"))?;
        (line.intercept, line.slope)
    };
    let warning = (sigma2 < 0.0).then(|| format!("extrapolated sigma2 = {sigma2} is negative: noise-dominated"));
    Ok(VarianceEstimate {
        sigma2,
        method: VarianceMethod::ScaledPartialSum,
        beta,
        per_n,
        cross_check: covariances.map(covariance_sum),
        warning,
        nu_k: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArModel, ArSpec, InnovationLaw, Observable};
    use crate::variance::estimate_autocov;

    #[test]
    fn iid_unit_variance() {
        let model = ArModel::new(ArSpec::iid(InnovationLaw::Normal { sd: 1.0 }, Observable::Identity)).unwrap();
        let est = sigma2_estimate(&model, &[81, 243, 729], 20_000, &InnovationStream::new(1), None).unwrap();
        assert!((est.sigma2 - 1.0).abs() < 0.05, "{}", est.sigma2);
        assert!(est.warning.is_none());
    }

    #[test]
    fn ar1_long_run_variance() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let s = InnovationStream::new(2);
        let lags: Vec<usize> = (0..=30).collect();
        let cov = estimate_autocov(&model, &lags, 31, 20_000, &s.fork("cov")).unwrap();
        let est = sigma2_estimate(&model, &[81, 243, 729], 20_000, &s, Some(&cov)).unwrap();
        assert!((est.sigma2 / 4.0 - 1.0).abs() < 0.1, "{}", est.sigma2);
        assert!((est.cross_check.unwrap() / 4.0 - 1.0).abs() < 0.15);
    }

    #[test]
    fn zero_observable() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let zero = ArModel::new(ArSpec {
            observable: Observable::Zero,
            ..*model.spec()
        })
        .unwrap();
        let est = sigma2_estimate(&zero, &[9, 27, 81], 100, &InnovationStream::new(3), None).unwrap();
        assert_eq!(est.sigma2, 0.0);
    }
}
