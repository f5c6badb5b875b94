use serde::Serialize;

use super::{block_index, BlockScheme};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub k: u32,
    pub m: u64,
    pub nu: f64,
    pub stderr: f64,
    /// `|ν̂_k − σ̂²|`.
    pub gap: f64,
}

/// `(log n) max_{k≤h_n} (m_k ν̂_k)^{1/2}` against `(log n)^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub n: u64,
    pub statistic: f64,
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub sigma2: f64,
    pub rows: Vec<DriftRow>,
    /// Kendall τ of `(k, |ν̂_k − σ̂²|)`; `≤ 0` is a decaying trend.
    pub trend: f64,
    /// Every gap within 3 combined standard errors of 0.
    pub within_noise: bool,
    pub envelope: Vec<EnvelopeRow>,
}

/// `nu` holds `(k, ν̂_k, stderr)`.
pub fn variance_drift_check(
    nu: &[(u32, f64, f64)],
    sigma2: f64,
    sigma2_stderr: f64,
    scheme: &BlockScheme,
    n_grid: &[u64],
) -> Result<DriftReport> {
    if nu.is_empty() {
        return Err(Error::invalid("no nu_k values"));
    }
    let rows: Vec<DriftRow> = nu
        .iter()
        .map(|&(k, v, se)| DriftRow {
            k,
            m: scheme.lag(k),
            nu: v,
            stderr: se,
            gap: (v - sigma2).abs(),
        })
        .collect();
    let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let trend = if rows.len() > 1 { stats::kendall_tau(&ks, &gaps) } else { 0.0 };
    let within_noise = rows
        .iter()
        .all(|r| r.gap <= 3.0 * (r.stderr * r.stderr + sigma2_stderr * sigma2_stderr).sqrt());
    let envelope = n_grid
        .iter()
        .map(|&n| {
            let h = block_index(n)?;
            let worst = rows
                .iter()
                .filter(|r| r.k <= h)
                .map(|r| (r.m as f64 * r.nu.max(0.0)).sqrt())
                .fold(0.0, f64::max);
            let log_n = (n as f64).ln();
            let statistic = log_n * worst;
            let envelope = log_n.powf(scheme.alpha);
            Ok(EnvelopeRow {
                n,
                statistic,
                envelope,
                ratio: statistic / envelope,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DriftReport {
        sigma2,
        rows,
        trend,
        within_noise,
        envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_geometric_drift() {
        let scheme = BlockScheme::new(1.0, 2.0, std::f64::consts::LN_2, 1.0).unwrap();
        let sigma2 = 4.0;
        let nu: Vec<(u32, f64, f64)> = (2..=8)
            .map(|k| {
                let m = scheme.lag(k) as i32;
                (k, sigma2 - 2.0 * 4.0 / 3.0 * 0.5f64.powi(m), 0.0)
            })
            .collect();
        let rep = variance_drift_check(&nu, sigma2, 0.0, &scheme, &[81, 729, 6561]).unwrap();
        for r in &rep.rows {
            let want = 8.0 / 3.0 * 0.5f64.powi(r.m as i32);
            assert!((r.gap - want).abs() < 1e-12);
        }
        assert_eq!(rep.trend, -1.0);
        assert!(rep.envelope.iter().all(|e| e.statistic > 0.0 && e.ratio.is_finite()));
    }

    #[test]
    fn noise_band() {
        let scheme = BlockScheme::new(1.0, 2.0, 1.0, 1.0).unwrap();
        let nu = [(2, 1.01, 0.01), (3, 0.99, 0.01)];
        assert!(variance_drift_check(&nu, 1.0, 0.0, &scheme, &[27]).unwrap().within_noise);
        let nu = [(2, 1.2, 0.01)];
        assert!(!variance_drift_check(&nu, 1.0, 0.0, &scheme, &[27]).unwrap().within_noise);
    }
}
