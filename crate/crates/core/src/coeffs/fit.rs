use super::DeltaEstimate;
use crate::error::{Error, Result};
use crate::stats;

/// Envelope `δ(n) ≤ exp(−c n^{γ₁})` fitted to an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub c: f64,
    pub gamma1: f64,
    /// R² of the regression of `log(−log δ̂)` on `log n`.
    pub r2: f64,
    pub points_used: usize,
}

impl DecayFit {
    pub fn envelope(&self, n: f64) -> f64 {
        (-self.c * n.powf(self.gamma1)).exp()
    }
}

/// Least squares of `log(−log δ̂(n))` on `log n`, then `c` lowered until
/// `exp(−c n^{γ₁})` dominates every point used.
///
/// Points with `δ̂ < 3·stderr` (noise floor), `δ̂ ≥ 1` or `n = 0` are left
/// out.
pub fn fit_decay(d: &DeltaEstimate) -> Result<DecayFit> {
    let strong = d
        .delta_hat
        .iter()
        .zip(&d.stderr)
        .filter(|(v, se)| **v > 10.0 * **se && **v > 0.0)
        .count();
    if strong < 4 {
        return Err(Error::InsufficientSignal(format!(
            "{strong} grid points above 10 standard errors, need 4"
        )));
    }
    let mut pts = Vec::new();
    for ((&n, &v), &se) in d.n_grid.iter().zip(&d.delta_hat).zip(&d.stderr) {
        if n == 0 || v < 3.0 * se || v >= 1.0 {
            continue;
        }
        if v <= 0.0 {
            return Err(Error::InsufficientSignal(format!("delta estimate {v} at n = {n}")));
        }
        pts.push((n as f64, v));
    }
    if pts.len() < 2 {
        return Err(Error::InsufficientSignal("fewer than 2 usable grid points".into()));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| (-p.1.ln()).ln()).collect();
    let line = stats::fit_line(&xs, &ys)
        .ok_or_else(|| Error::InsufficientSignal("degenerate n grid".into()))?;
    let gamma1 = line.slope;
    if !(gamma1 > 0.0) {
        return Err(Error::InsufficientSignal(format!("fitted decay index {gamma1} is not positive")));
    }
    let c_ls = line.intercept.exp();
    let c_dom = pts
        .iter()
        .map(|&(n, v)| -v.ln() / n.powf(gamma1))
        .fold(f64::INFINITY, f64::min);
    Ok(DecayFit {
        c: c_ls.min(c_dom),
        gamma1,
        r2: line.r2,
        points_used: pts.len(),
    })
}

/// Envelope `P(|X| > t) ≤ exp(1 − (t/b)^{γ₂})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    pub b: f64,
    /// `f64::INFINITY` for bounded samples.
    pub gamma2: f64,
    pub grid_violations: usize,
    /// `(t, P̂(|X| > t))` on the validity grid.
    pub grid: Vec<(f64, f64)>,
}

impl TailFit {
    pub fn envelope(&self, t: f64) -> f64 {
        if self.gamma2.is_infinite() {
            return if t < self.b { 1.0 } else { 0.0 };
        }
        (1.0 - (t / self.b).powf(self.gamma2)).exp().min(1.0)
    }

    /// Smallest `b` making the bound hold on the grid for a given index.
    pub fn scale_for(&self, gamma: f64) -> f64 {
        smallest_scale(&self.grid, gamma)
    }
}

const MIN_SAMPLES: usize = 10_000;
const MIN_EXCEEDANCES: usize = 10;

fn smallest_scale(grid: &[(f64, f64)], gamma: f64) -> f64 {
    let b = grid
        .iter()
        .map(|&(t, p)| t / (1.0 - p.ln()).powf(1.0 / gamma))
        .fold(0.0, f64::max);
    b * (1.0 + 1e-12)
}

/// Fits the tail index from samples of `|X₁|`.
///
/// On a grid of upper-decile quantiles `t_j` with first point `u`, the
/// conditional exceedance log-probabilities `−log P̂(t_j) + log P̂(u)` are
/// matched to `β(t_j^γ − u^γ)` by weighted least squares (weights are the
/// inverse binomial variances), profiling `β` and scanning `γ`. Then `b` is
/// the smallest scale that makes the bound hold on the grid.
pub fn fit_tail(samples: &[f64]) -> Result<TailFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!(
            "tail fit needs at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let mut a: Vec<f64> = samples.iter().map(|x| x.abs()).collect();
    a.sort_by(f64::total_cmp);
    let n = a.len();
    let max = a[n - 1];
    if a[n - n / 100 - 1] == max {
        return Ok(TailFit {
            b: max,
            gamma2: f64::INFINITY,
            grid_violations: 0,
            grid: vec![(max, 0.0)],
        });
    }
    let mut grid: Vec<(f64, f64)> = Vec::new();
    for j in 0..40 {
        let q = 0.9 + 0.099 * j as f64 / 39.0;
        let t = stats::quantile_sorted(&a, q);
        if grid.last().is_some_and(|&(prev, _)| t <= prev) {
            continue;
        }
        let exceed = n - a.partition_point(|&x| x <= t);
        if exceed < MIN_EXCEEDANCES {
            continue;
        }
        grid.push((t, exceed as f64 / n as f64));
    }
    if grid.len() < 5 || !(grid[0].0 > 0.0) {
        return Err(Error::InsufficientTail(format!(
            "{} usable tail grid points",
            grid.len()
        )));
    }
    let (u, pu) = grid[0];
    let rest = &grid[1..];
    let ys: Vec<f64> = rest.iter().map(|&(_, p)| -p.ln() + pu.ln()).collect();
    let ws: Vec<f64> = rest.iter().map(|&(_, p)| p / (1.0 - p / pu)).collect();
    let sse = |g: f64| -> f64 {
        let ug = u.powf(g);
        let xs: Vec<f64> = rest.iter().map(|&(t, _)| t.powf(g) - ug).collect();
        let sxy: f64 = xs.iter().zip(&ys).zip(&ws).map(|((x, y), w)| w * x * y).sum();
        let sxx: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x * x).sum();
        let beta = sxy / sxx;
        xs.iter()
            .zip(&ys)
            .zip(&ws)
            .map(|((x, y), w)| w * (y - beta * x).powi(2))
            .sum()
    };
    let (lo, hi) = (0.05f64.ln(), 8f64.ln());
    let steps = 4000;
    let gamma2 = (0..=steps)
        .map(|i| (lo + (hi - lo) * i as f64 / steps as f64).exp())
        .map(|g| (g, sse(g)))
        .filter(|(_, e)| e.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(g, _)| g)
        .ok_or_else(|| Error::InsufficientTail("tail regression failed".into()))?;
    let b = smallest_scale(&grid, gamma2);
    let mut fit = TailFit {
        b,
        gamma2,
        grid_violations: 0,
        grid,
    };
    fit.grid_violations = fit.grid.iter().filter(|&&(t, p)| fit.envelope(t) < p).count();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    #[test]
    fn exact_exponential_decay() {
        let grid: Vec<usize> = (1..=20).collect();
        let d = DeltaEstimate::exact(grid.clone(), grid.iter().map(|&n| (-0.3 * n as f64).exp()).collect());
        let f = fit_decay(&d).unwrap();
        assert!((f.gamma1 - 1.0).abs() < 1e-6);
        assert!((f.c - 0.3).abs() < 1e-6);
        assert!((f.r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_stretched_decay() {
        let grid: Vec<usize> = (1..=40).collect();
        let d = DeltaEstimate::exact(grid.clone(), grid.iter().map(|&n| (-(n as f64).sqrt()).exp()).collect());
        let f = fit_decay(&d).unwrap();
        assert!((f.gamma1 - 0.5).abs() < 1e-6);
        assert!((f.c - 1.0).abs() < 1e-6);
    }

    #[test]
    fn envelope_dominates_noisy_points() {
        let grid: Vec<usize> = (1..=15).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&n| (-0.5 * n as f64).exp() * (1.0 + 0.2 * ((n * 7) % 5) as f64 / 5.0))
            .collect();
        let d = DeltaEstimate::exact(grid.clone(), vals.clone());
        let f = fit_decay(&d).unwrap();
        for (n, v) in grid.iter().zip(&vals) {
            assert!(f.envelope(*n as f64) >= v * (1.0 - 1e-12));
        }
    }

    #[test]
    fn insufficient_signal() {
        let d = DeltaEstimate {
            n_grid: vec![1, 2, 3, 4],
            delta_hat: vec![0.5, 0.25, 0.0, 0.0],
            stderr: vec![0.01, 0.01, 0.0, 0.0],
            replicates: 10,
            burn_in: 0,
            sensitivity: None,
        };
        assert!(matches!(fit_decay(&d), Err(Error::InsufficientSignal(_))));
    }

    #[test]
    fn gaussian_tail_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = fit_tail(&xs).unwrap();
        assert!((1.6..=2.4).contains(&f.gamma2), "gamma2 {}", f.gamma2);
        assert_eq!(f.grid_violations, 0);
    }

    #[test]
    fn exponential_tail_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let xs: Vec<f64> = (0..1_000_000).map(|_| Exp1.sample(&mut rng)).collect();
        let f = fit_tail(&xs).unwrap();
        assert!((0.85..=1.15).contains(&f.gamma2), "gamma2 {}", f.gamma2);
        assert_eq!(f.grid_violations, 0);
        for &(t, p) in &f.grid {
            assert!(f.envelope(t) >= p);
        }
    }

    #[test]
    fn bounded_samples() {
        let f = fit_tail(&vec![3.0; 20_000]).unwrap();
        assert_eq!(f.gamma2, f64::INFINITY);
        assert_eq!(f.b, 3.0);
        assert!(fit_tail(&[1.0; 10]).is_err());
    }
}
