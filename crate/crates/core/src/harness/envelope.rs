use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::InnovationStream;
use crate::stats;

/// `D_n ≤ Ĉ (log n)^p̂` on the fitted grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEnvelopeFit {
    pub exponent: f64,
    pub scale: f64,
    /// Percentile bootstrap interval over paths, widened to contain the
    /// point estimate.
    pub ci: (f64, f64),
    pub bootstrap: usize,
    pub degenerate: bool,
}

impl RateEnvelopeFit {
    pub fn ci_width(&self) -> f64 {
        self.ci.1 - self.ci.0
    }
}

/// Least-squares slope of `log D` on `log log n`, over points with `D > 0`.
fn slope(n_grid: &[u64], d: &[f64]) -> Option<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = n_grid
        .iter()
        .zip(d)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&n, &v)| ((n as f64).ln().ln(), v.ln()))
        .unzip();
    if xs.len() < 2 {
        return None;
    }
    stats::fit_line(&xs, &ys).map(|l| (l.slope, l.intercept))
}

fn check_grid(n_grid: &[u64]) -> Result<()> {
    if n_grid.len() < 4 {
        return Err(Error::invalid("rate envelope needs at least 4 grid points"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] < 3 {
        return Err(Error::invalid("rate envelope grid must be increasing from n >= 3"));
    }
    if *n_grid.last().unwrap() < 9 * n_grid[0] {
        return Err(Error::invalid("rate envelope grid must span two powers of 3"));
    }
    Ok(())
}

/// Envelope of a single series, without a bootstrap.
pub fn fit_rate_series(n_grid: &[u64], d: &[f64]) -> Result<RateEnvelopeFit> {
    fit_rate_envelope(n_grid, &[d.to_vec()], 0, &InnovationStream::new(0))
}

/// Fits the path-mean series and bootstraps the exponent over paths.
/// `per_path[r][q]` is path `r` at `n_grid[q]`.
pub fn fit_rate_envelope(
    n_grid: &[u64],
    per_path: &[Vec<f64>],
    bootstrap: usize,
    stream: &InnovationStream,
) -> Result<RateEnvelopeFit> {
    check_grid(n_grid)?;
    if per_path.is_empty() || per_path.iter().any(|p| p.len() != n_grid.len()) {
        return Err(Error::invalid("every path needs one value per grid point"));
    }
    let mean_of = |idx: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let mut acc = vec![0.0; n_grid.len()];
        let mut count = 0usize;
        for r in idx {
            for (a, v) in acc.iter_mut().zip(&per_path[r]) {
                *a += v;
            }
            count += 1;
        }
        acc.iter().map(|a| a / count as f64).collect()
    };
    let d = mean_of(&mut (0..per_path.len()));
    let Some((p, _)) = slope(n_grid, &d) else {
        return Ok(RateEnvelopeFit {
            exponent: 0.0,
            scale: d.iter().copied().fold(0.0, f64::max),
            ci: (0.0, 0.0),
            bootstrap: 0,
            degenerate: true,
        });
    };
    // lift the scale until the envelope dominates every point
    let scale = n_grid
        .iter()
        .zip(&d)
        .map(|(&n, &v)| v / (n as f64).ln().powf(p))
        .fold(0.0, f64::max);
    let mut rng = stream.clone();
    let mut boots: Vec<f64> = (0..bootstrap)
        .filter_map(|_| {
            let r = per_path.len();
            let mean = mean_of(&mut (0..r).map(|_| rng.random_range(0..r)));
            slope(n_grid, &mean).map(|(s, _)| s)
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let ci = if boots.is_empty() {
        (p, p)
    } else {
        let lo = stats::quantile_sorted(&boots, 0.025);
        let hi = stats::quantile_sorted(&boots, 0.975);
        (lo.min(p), hi.max(p))
    };
    Ok(RateEnvelopeFit {
        exponent: p,
        scale,
        ci,
        bootstrap: boots.len(),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<u64> {
        (5..=9).map(crate::asip::pow3).collect()
    }

    #[test]
    fn exact_power_of_log() {
        let g = grid();
        let d: Vec<f64> = g.iter().map(|&n| (n as f64).ln().powi(2)).collect();
        let fit = fit_rate_series(&g, &d).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-6);
        assert!((fit.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_and_zero_series() {
        let g = grid();
        let fit = fit_rate_series(&g, &vec![5.0; g.len()]).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
        assert!((fit.scale - 5.0).abs() < 1e-9);
        let zero = fit_rate_series(&g, &vec![0.0; g.len()]).unwrap();
        assert!(zero.degenerate);
        assert_eq!(zero.exponent, 0.0);
    }

    #[test]
    fn envelope_dominates_and_ci_contains_estimate() {
        let g = grid();
        let mut rng = InnovationStream::new(3);
        let paths: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                g.iter()
                    .map(|&n| (n as f64).ln().powf(1.5) * (0.5 + rng.random::<f64>()))
                    .collect()
            })
            .collect();
        let fit = fit_rate_envelope(&g, &paths, 200, &InnovationStream::new(4)).unwrap();
        assert!(fit.ci.0 <= fit.exponent && fit.exponent <= fit.ci.1);
        let mean: Vec<f64> = (0..g.len()).map(|q| paths.iter().map(|p| p[q]).sum::<f64>() / 40.0).collect();
        for (&n, &v) in g.iter().zip(&mean) {
            assert!(fit.scale * (n as f64).ln().powf(fit.exponent) >= v * (1.0 - 1e-12));
        }
    }

    #[test]
    fn grid_preconditions() {
        assert!(fit_rate_series(&[3, 9, 27], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_rate_series(&[10, 11, 12, 13], &[1.0; 4]).is_err());
    }
}
