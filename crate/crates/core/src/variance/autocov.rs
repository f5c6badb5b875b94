use rayon::prelude::*;

use crate::asip::BlockScheme;
use crate::error::{Error, Result};
use crate::models::{draw_innovations, replay, stationary_sample, InnovationStream, MarkovModel};
use crate::stats;

/// Ensemble autocovariances `γ̂_i` on a lag grid, `γ̂_{−i} = γ̂_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autocov {
    pub lags: Vec<usize>,
    pub gamma: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicates: usize,
}

impl Autocov {
    pub fn at(&self, lag: i64) -> Option<f64> {
        let i = lag.unsigned_abs() as usize;
        self.lags.iter().position(|&l| l == i).map(|p| self.gamma[p])
    }

    /// Values at lags `0, 1, …` for as long as the grid is contiguous.
    pub fn contiguous(&self) -> Vec<f64> {
        self.lags
            .iter()
            .enumerate()
            .take_while(|(p, &l)| *p == l)
            .map(|(p, _)| self.gamma[p])
            .collect()
    }

    fn from_columns(lags: &[usize], anchor: &[f64], lagged: &[Vec<f64>]) -> Self {
        let (gamma, stderr) = lagged
            .iter()
            .map(|col| stats::covariance_stderr(anchor, col))
            .unzip();
        Autocov {
            lags: lags.to_vec(),
            gamma,
            stderr,
            replicates: anchor.len(),
        }
    }
}

/// Plain, clipped and `m_k`-dependent autocovariances for one block index,
/// all computed on the same base trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub k: u32,
    pub m: usize,
    pub level: f64,
    pub plain: Autocov,
    pub trunc: Autocov,
    /// Zero with zero standard error at lags above `m`.
    pub tilde: Autocov,
    /// Mean inner-resample variance divided by the inner count: the upward
    /// bias of `γ̃_0` due to finite inner averaging.
    pub inner_bias_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovOptions {
    pub replicates: usize,
    /// Regenerated pasts per conditional mean.
    pub inner: usize,
    pub burn_in: Option<usize>,
}

impl CovOptions {
    pub fn new(replicates: usize, inner: usize) -> Self {
        CovOptions {
            replicates,
            inner,
            burn_in: None,
        }
    }
}

/// `E(φ(X_j) | ε_s, …, ε_j)` approximated by averaging `φ(X_j)` over `inner`
/// pasts regenerated from fresh stationary starts `W_{s−1}`; `window` holds
/// `ε_s … ε_j`. Returns the mean and the sample variance of the inner values.
pub fn conditional_clip_mean<M: MarkovModel>(
    model: &M,
    burn_in: usize,
    window: &[M::Innovation],
    level: f64,
    inner: usize,
    stream: &InnovationStream,
) -> (f64, f64) {
    let clip = |x: f64| x.clamp(-level, level);
    if model.is_memoryless() {
        let x = replay(model, model.reference_start(), window);
        return (clip(*x.last().unwrap()), 0.0);
    }
    let vals: Vec<f64> = (0..inner as u64)
        .map(|q| {
            let mut s = stream.child(q);
            let mut w = stationary_sample(model, burn_in, &mut s);
            let (last, head) = window.split_last().unwrap();
            for e in head {
                w = model.step(&w, e).0;
            }
            clip(model.step(&w, last).1)
        })
        .collect();
    (stats::mean(&vals), stats::variance(&vals))
}

/// Plain ensemble autocovariances at `lags`, from `replicates` stationary
/// paths of length `n`, anchored at `n − max lag`.
pub fn estimate_autocov<M: MarkovModel>(
    model: &M,
    lags: &[usize],
    n: usize,
    replicates: usize,
    stream: &InnovationStream,
) -> Result<Autocov> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    if n <= max_lag {
        return Err(Error::invalid(format!("path length {n} must exceed the largest lag {max_lag}")));
    }
    if replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    let anchor = n - max_lag;
    let burn = model.default_burn_in();
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.child(r);
            let w0 = stationary_sample(model, burn, &mut s.fork("start"));
            let inn = draw_innovations(model, n, &mut s.fork("path"));
            let x = replay(model, w0, &inn);
            std::iter::once(x[anchor - 1])
                .chain(lags.iter().map(|&i| x[anchor - 1 + i]))
                .collect()
        })
        .collect();
    let anchor_col: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let lagged: Vec<Vec<f64>> = (0..lags.len())
        .map(|p| rows.iter().map(|r| r[p + 1]).collect())
        .collect();
    Ok(Autocov::from_columns(lags, &anchor_col, &lagged))
}

struct SetRow {
    plain: Vec<f64>,
    trunc: Vec<f64>,
    tilde: Vec<f64>,
    inner_var: f64,
}

/// The three covariance families at block index `k`.
///
/// Paths start from a stationary `W_0` and are anchored at `j₀ = m_k + 1`
/// so the anchor's innovation window `ε_1 … ε_{j₀}` lies inside the path.
/// Lags above `m_k` get `γ̃ = 0` by `m_k`-dependence.
pub fn covariance_set<M: MarkovModel>(
    model: &M,
    scheme: &BlockScheme,
    k: u32,
    lags: &[usize],
    opts: CovOptions,
    stream: &InnovationStream,
) -> Result<CovarianceSet> {
    if opts.replicates < 2 {
        return Err(Error::invalid("need at least 2 replicates"));
    }
    if opts.inner < 8 && !model.is_memoryless() {
        return Err(Error::invalid("need at least 8 inner resamples"));
    }
    if !model.supports_replay() {
        return Err(Error::Capability("model cannot replay innovation windows".into()));
    }
    let m = scheme.lag(k) as usize;
    let level = scheme.level(k);
    let anchor = m + 1;
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let n = anchor + max_lag;
    let burn = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    let tilde_lags: Vec<(usize, usize)> = lags.iter().copied().enumerate().filter(|&(_, i)| i <= m).collect();
    let rows: Vec<SetRow> = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.child(r);
            let w0 = stationary_sample(model, burn, &mut s.fork("start"));
            let inn = draw_innovations(model, n, &mut s.fork("path"));
            let x = replay(model, w0, &inn);
            let pick = |j: usize| x[j - 1];
            let positions: Vec<usize> = std::iter::once(anchor).chain(lags.iter().map(|&i| anchor + i)).collect();
            let plain: Vec<f64> = positions.iter().map(|&j| pick(j)).collect();
            let trunc: Vec<f64> = plain.iter().map(|v| v.clamp(-level, level)).collect();
            let inner_stream = s.fork("inner");
            let mut inner_var = 0.0;
            let tilde_positions = std::iter::once(anchor).chain(tilde_lags.iter().map(|&(_, i)| anchor + i));
            let tilde: Vec<f64> = tilde_positions
                .map(|j| {
                    let start = j.saturating_sub(m).max(1);
                    let (mean, var) = conditional_clip_mean(
                        model,
                        burn,
                        &inn[start - 1..j],
                        level,
                        opts.inner,
                        &inner_stream.child(j as u64),
                    );
                    inner_var += var;
                    mean
                })
                .collect();
            let count = 1 + tilde_lags.len();
            SetRow {
                plain,
                trunc,
                tilde,
                inner_var: inner_var / count as f64,
            }
        })
        .collect();
    let col = |f: &dyn Fn(&SetRow) -> &Vec<f64>, p: usize| -> Vec<f64> { rows.iter().map(|r| f(r)[p]).collect() };
    let plain_cols: Vec<Vec<f64>> = (0..lags.len()).map(|p| col(&|r| &r.plain, p + 1)).collect();
    let trunc_cols: Vec<Vec<f64>> = (0..lags.len()).map(|p| col(&|r| &r.trunc, p + 1)).collect();
    let plain = Autocov::from_columns(lags, &col(&|r| &r.plain, 0), &plain_cols);
    let trunc = Autocov::from_columns(lags, &col(&|r| &r.trunc, 0), &trunc_cols);
    let tilde_anchor = col(&|r| &r.tilde, 0);
    let mut gamma = vec![0.0; lags.len()];
    let mut stderr = vec![0.0; lags.len()];
    for (q, &(p, _)) in tilde_lags.iter().enumerate() {
        let (g, se) = stats::covariance_stderr(&tilde_anchor, &col(&|r| &r.tilde, q + 1));
        gamma[p] = g;
        stderr[p] = se;
    }
    let tilde = Autocov {
        lags: lags.to_vec(),
        gamma,
        stderr,
        replicates: opts.replicates,
    };
    let inner_var: Vec<f64> = rows.iter().map(|r| r.inner_var).collect();
    let inner_bias_bound = if model.is_memoryless() {
        0.0
    } else {
        stats::mean(&inner_var) / opts.inner as f64
    };
    Ok(CovarianceSet {
        k,
        m,
        level,
        plain,
        trunc,
        tilde,
        inner_bias_bound,
    })
}

/// Mean and standard error of `|φ_k(X_j) − X̃_{k,j}|` at a position `j`,
/// i.e. the L¹ error of the conditional-mean approximation.
pub fn mdep_gap<M: MarkovModel>(
    model: &M,
    scheme: &BlockScheme,
    k: u32,
    j: usize,
    opts: CovOptions,
    stream: &InnovationStream,
) -> Result<(f64, f64)> {
    if j == 0 {
        return Err(Error::invalid("positions start at 1"));
    }
    let m = scheme.lag(k) as usize;
    let level = scheme.level(k);
    let burn = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    let gaps: Vec<f64> = (0..opts.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.child(r);
            let w0 = stationary_sample(model, burn, &mut s.fork("start"));
            let inn = draw_innovations(model, j, &mut s.fork("path"));
            let x = replay(model, w0, &inn);
            let start = j.saturating_sub(m).max(1);
            let (mean, _) = conditional_clip_mean(model, burn, &inn[start - 1..j], level, opts.inner, &s.fork("inner"));
            (x[j - 1].clamp(-level, level) - mean).abs()
        })
        .collect();
    Ok(stats::mean_stderr(&gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{estimate_delta, DeltaOptions};
    use crate::models::{ArModel, ArSpec, InnovationLaw, Observable};

    fn iid() -> ArModel {
        ArModel::new(ArSpec::iid(InnovationLaw::Normal { sd: 1.0 }, Observable::Identity)).unwrap()
    }

    #[test]
    fn iid_autocov_vanishes() {
        let a = estimate_autocov(&iid(), &[0, 1, 2, 5], 10, 20_000, &InnovationStream::new(1)).unwrap();
        assert!((a.gamma[0] - 1.0).abs() < 3.0 * a.stderr[0]);
        for p in 1..4 {
            assert!(a.gamma[p].abs() < 3.0 * a.stderr[p], "lag {}", a.lags[p]);
        }
        assert_eq!(a.at(-2), a.at(2));
    }

    #[test]
    fn ar1_autocov() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let lags = [0, 1, 2, 3, 4];
        let a = estimate_autocov(&model, &lags, 8, 20_000, &InnovationStream::new(2)).unwrap();
        for (p, &i) in lags.iter().enumerate() {
            let want = 4.0 / 3.0 * 0.5f64.powi(i as i32);
            assert!((a.gamma[p] - want).abs() < 3.0 * a.stderr[p], "lag {i}: {} vs {want}", a.gamma[p]);
            assert!(a.gamma[p].abs() <= a.gamma[0] + 2.0 * a.stderr[p]);
        }
    }

    #[test]
    fn zero_observable() {
        let model = ArModel::new(ArSpec::iid(InnovationLaw::Normal { sd: 1.0 }, Observable::Zero)).unwrap();
        let a = estimate_autocov(&model, &[0, 1, 3], 5, 100, &InnovationStream::new(3)).unwrap();
        assert!(a.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn truncation_and_mdep_families() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let lags: Vec<usize> = (0..=6).collect();
        let s = InnovationStream::new(4);
        // huge b: clip inactive, so the truncated family equals the plain one
        let wide = BlockScheme::new(1.0, 1.0, 2f64.ln(), 1e6).unwrap();
        let set = covariance_set(&model, &wide, 2, &lags, CovOptions::new(2000, 8), &s).unwrap();
        assert_eq!(set.trunc.gamma, set.plain.gamma);
        for (p, &i) in lags.iter().enumerate() {
            if i > set.m {
                assert_eq!(set.tilde.gamma[p], 0.0);
                assert_eq!(set.tilde.stderr[p], 0.0);
            } else {
                // same draws: γ̃ tracks γ̂ closely
                assert!((set.tilde.gamma[p] - set.plain.gamma[p]).abs() < 0.05 + 3.0 * set.tilde.stderr[p]);
            }
        }
        // tiny b: heavy clipping changes the covariances
        let narrow = BlockScheme::new(1.0, 1.0, 2f64.ln(), 1e-9).unwrap();
        let set = covariance_set(&model, &narrow, 1, &lags, CovOptions::new(500, 8), &s).unwrap();
        assert!(set.trunc.gamma[0] < 1e-15);
    }

    #[test]
    fn memoryless_tilde_equals_trunc() {
        let scheme = BlockScheme::new(1.0, 2.0, 1.0, 1.0).unwrap();
        let set = covariance_set(&iid(), &scheme, 3, &[0, 1, 2], CovOptions::new(3000, 8), &InnovationStream::new(5)).unwrap();
        for p in 0..3 {
            if set.tilde.lags[p] <= set.m {
                assert_eq!(set.tilde.gamma[p], set.trunc.gamma[p]);
            }
        }
        assert_eq!(set.inner_bias_bound, 0.0);
    }

    #[test]
    fn mdep_error_bounded_by_delta() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let scheme = BlockScheme::new(1.0, 1.0, 2f64.ln(), 1e3).unwrap();
        let k = 1;
        let m = scheme.lag(k) as usize;
        let s = InnovationStream::new(6);
        let (gap, se) = mdep_gap(&model, &scheme, k, m + 1, CovOptions::new(2000, 16), &s).unwrap();
        let d = estimate_delta(&model, &[m], DeltaOptions::new(5000), &s.fork("delta")).unwrap();
        assert!(gap <= d.delta_hat[0] + 3.0 * (se + d.stderr[0]), "gap {gap} delta {}", d.delta_hat[0]);
    }
}
