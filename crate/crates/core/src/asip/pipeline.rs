use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::coupling::{coupled_blocks, sub_block_len};
use super::paths::block_errors;
use super::{
    estimate_clip_means, gaussian_coupling, mdep_path, truncated_increments, BlockCovariance, BlockScheme, ClipMeans,
    CouplingMethod, CouplingPlan, CouplingResult, MdepOptions, StageIncrements,
};
use crate::error::{Error, Result};
use crate::harness::{fit_rate_envelope, RateEnvelopeFit};
use crate::models::{draw_innovations, replay, stationary_sample, InnovationStream, MarkovModel};
use crate::stats;
use crate::variance::{conditional_clip_mean, covariance_set, CovOptions};

/// One replicate: stage increments, per-block errors and the inner variance of the m-dependent stage.
type PathRun = (StageIncrements, Vec<(u32, f64)>, f64);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsipOptions {
    pub n_grid: Vec<u64>,
    pub paths: usize,
    pub inner: usize,
    pub clip_draws: usize,
    /// Replicates behind each block's `γ̃` estimate.
    pub cov_replicates: usize,
    pub method: CouplingMethod,
    pub burn_in: Option<usize>,
    pub bootstrap: usize,
    /// `E X`, when known; used as a control variate for the clip means.
    pub observable_mean: Option<f64>,
}

impl AsipOptions {
    pub fn new(n_grid: Vec<u64>, paths: usize) -> Self {
        AsipOptions {
            n_grid,
            paths,
            inner: 8,
            clip_draws: 100_000,
            cov_replicates: 2000,
            method: CouplingMethod::Whitening,
            burn_in: None,
            bootstrap: 200,
            observable_mean: Some(0.0),
        }
    }
}

/// Path mean of `max_ℓ |W_{k,ℓ} − W̃_{k,ℓ}|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockError {
    pub k: u32,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsipRun {
    pub scheme: BlockScheme,
    /// `(k, μ_k)`.
    pub clip_means: Vec<(u32, f64)>,
    pub covariances: Vec<BlockCovariance>,
    /// `(k, γ̃_0 + 2Σγ̃_i)` for the coupled blocks.
    pub nu_hat: Vec<(u32, f64)>,
    pub coupling: CouplingResult,
    /// Complete blocks only.
    pub block_errors: Vec<BlockError>,
    pub truncation_fit: Option<RateEnvelopeFit>,
    pub inner_var: f64,
    /// Blocks whose `γ̃` estimate had to be made positive definite.
    pub repaired: Vec<u32>,
}

/// Sums of `⌈3^{k/2}⌉` consecutive `X̃_{k,·}` from independent stationary
/// paths, for the quantile coupling.
pub fn mdep_calibration<M: MarkovModel>(
    model: &M,
    scheme: &BlockScheme,
    clip: &ClipMeans,
    k: u32,
    size: usize,
    opts: MdepOptions,
    stream: &InnovationStream,
) -> Result<Vec<f64>> {
    let m = scheme.lag(k) as usize;
    let len = sub_block_len(k) as usize;
    let level = scheme.level(k);
    let mu = clip.get(k)?;
    let burn = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    Ok((0..size as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.child(r);
            let inn = draw_innovations(model, m + len, &mut s.fork("path"));
            let inner = s.fork("inner");
            (m + 1..=m + len)
                .map(|j| {
                    conditional_clip_mean(model, burn, &inn[j - m - 1..j], level, opts.inner, &inner.child(j as u64)).0
                        - mu
                })
                .sum()
        })
        .collect())
}

/// Runs truncation, the `m_k`-dependent approximation and the coupling on
/// `opts.paths` stationary paths of length `max(n_grid)`.
pub fn run_pipeline<M: MarkovModel>(
    model: &M,
    scheme: &BlockScheme,
    opts: &AsipOptions,
    stream: &InnovationStream,
) -> Result<AsipRun> {
    let n = *opts.n_grid.last().ok_or_else(|| Error::invalid("empty n grid"))?;
    if n < 2 || opts.paths == 0 {
        return Err(Error::invalid("need n >= 2 and at least one path"));
    }
    let top = super::block_index(n)?;
    let mdep = MdepOptions {
        inner: opts.inner,
        burn_in: opts.burn_in,
    };
    let clip = estimate_clip_means(model, scheme, top, opts.clip_draws, opts.observable_mean, &stream.fork("clip"))?;
    let blocks = coupled_blocks(scheme, n)?;

    let mut covariances = Vec::new();
    for &k in &blocks {
        let m = scheme.lag(k) as usize;
        let lags: Vec<usize> = (0..=m).collect();
        let cov_opts = CovOptions {
            replicates: opts.cov_replicates,
            inner: opts.inner,
            burn_in: opts.burn_in,
        };
        let set = covariance_set(model, scheme, k, &lags, cov_opts, &stream.fork("cov").child(k as u64))?;
        covariances.push(BlockCovariance { k, gamma: set.tilde.gamma });
    }
    let nu_hat: Vec<(u32, f64)> = covariances.iter().map(|c| (c.k, c.nu())).collect();
    let nu_target = nu_hat.last().map(|&(_, v)| v.max(0.0)).unwrap_or(0.0);

    let plan = match opts.method {
        CouplingMethod::Whitening => CouplingPlan::whitening(scheme, &covariances, nu_target, n)?,
        CouplingMethod::SubBlockQuantile { calibration } => {
            let cal = blocks
                .iter()
                .map(|&k| {
                    let s = stream.fork("calibration").child(k as u64);
                    Ok((k, mdep_calibration(model, scheme, &clip, k, calibration, mdep, &s)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            CouplingPlan::sub_block_quantile(scheme, &cal, nu_target, n)?
        }
    };

    let burn = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    let runs: Vec<PathRun> = (0..opts.paths as u64)
        .into_par_iter()
        .map(|r| {
            let s = stream.fork("paths").child(r);
            let w0 = stationary_sample(model, burn, &mut s.fork("start"));
            let inn = draw_innovations(model, n as usize, &mut s.fork("path"));
            let x = replay(model, w0, &inn);
            let dag = truncated_increments(&x, scheme, &clip)?;
            let tilde = mdep_path(model, &inn, scheme, &clip, mdep, &s.fork("inner"))?;
            let errs = block_errors(&dag, &tilde.increments, scheme)?;
            Ok((
                StageIncrements {
                    x,
                    dag,
                    tilde: tilde.increments,
                },
                errs,
                tilde.inner_var,
            ))
        })
        .collect::<Result<_>>()?;

    let complete: Vec<u32> = (1..=top).filter(|&k| scheme.block_range(k).1 <= n).collect();
    let block_errors = complete
        .iter()
        .map(|&k| {
            let vals: Vec<f64> = runs.iter().map(|r| r.1[k as usize - 1].1).collect();
            let (mean, stderr) = stats::mean_stderr(&vals);
            BlockError { k, mean, stderr }
        })
        .collect();
    let inner_var = stats::mean(&runs.iter().map(|r| r.2).collect::<Vec<_>>());
    let stages: Vec<StageIncrements> = runs.into_iter().map(|r| r.0).collect();
    let coupling = gaussian_coupling(&stages, &plan, &opts.n_grid, opts.bootstrap, &stream.fork("couple"))?;
    let truncation_fit =
        fit_rate_envelope(&opts.n_grid, &coupling.trunc_per_path(), opts.bootstrap, &stream.fork("trunc-fit")).ok();
    Ok(AsipRun {
        scheme: scheme.clone(),
        clip_means: (1..=top).map(|k| Ok((k, clip.get(k)?))).collect::<Result<_>>()?,
        covariances,
        nu_hat,
        coupling,
        block_errors,
        truncation_fit,
        inner_var,
        repaired: plan.repaired.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArModel, ArSpec, InnovationLaw, Observable};

    fn scheme() -> BlockScheme {
        BlockScheme::new(1.0, 2.0, std::f64::consts::LN_2, 1.2).unwrap()
    }

    #[test]
    fn zero_observable_couples_exactly() {
        let model = ArModel::new(ArSpec {
            observable: Observable::Zero,
            ..ArSpec::linear(0.5)
        })
        .unwrap();
        let mut opts = AsipOptions::new(vec![27, 81, 243, 729], 4);
        opts.clip_draws = 1000;
        opts.cov_replicates = 50;
        opts.bootstrap = 0;
        let run = run_pipeline(&model, &scheme(), &opts, &InnovationStream::new(1)).unwrap();
        assert!(run.coupling.d.iter().all(|&d| d == 0.0));
        assert!(run.nu_hat.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn memoryless_model_has_no_mdep_error() {
        let model = ArModel::new(ArSpec::iid(InnovationLaw::Normal { sd: 1.0 }, Observable::Identity)).unwrap();
        let mut opts = AsipOptions::new(vec![27, 81, 243, 729], 4);
        opts.clip_draws = 2000;
        opts.cov_replicates = 400;
        opts.bootstrap = 20;
        let run = run_pipeline(&model, &scheme(), &opts, &InnovationStream::new(2)).unwrap();
        assert!(run.coupling.mdep_err.iter().all(|&e| e == 0.0));
        assert!(run.block_errors.iter().all(|b| b.mean == 0.0));
        assert_eq!(run.coupling.telescoping_violations, 0);
    }

    #[test]
    fn rerun_is_identical() {
        let model = ArModel::new(ArSpec::linear(0.5)).unwrap();
        let mut opts = AsipOptions::new(vec![9, 27, 81, 243], 3);
        opts.clip_draws = 500;
        opts.cov_replicates = 200;
        opts.bootstrap = 10;
        let a = run_pipeline(&model, &scheme(), &opts, &InnovationStream::new(3)).unwrap();
        let b = run_pipeline(&model, &scheme(), &opts, &InnovationStream::new(3)).unwrap();
        assert_eq!(a, b);
    }
}
