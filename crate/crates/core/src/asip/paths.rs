use super::{block_index, BlockScheme};
use crate::error::{Error, Result};
use crate::models::{stationary_observables, InnovationStream, MarkovModel};
use crate::variance::conditional_clip_mean;

/// `μ_k = E φ_k(X₁)` for `k = 1 ..= upto`, all from one stationary sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMeans {
    means: Vec<f64>,
    pub draws: usize,
}

impl ClipMeans {
    /// Known values, index `k − 1` holding `μ_k`.
    pub fn exact(means: Vec<f64>) -> Self {
        ClipMeans { means, draws: 0 }
    }

    pub fn zeros(upto: u32) -> Self {
        ClipMeans::exact(vec![0.0; upto as usize])
    }

    pub fn get(&self, k: u32) -> Result<f64> {
        self.means
            .get(k as usize - 1)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no clip mean for block {k}")))
    }

    pub fn upto(&self) -> u32 {
        self.means.len() as u32
    }
}

/// With `known_mean = Some(E X)` the estimate is `E X + mean(φ_k(X) − X)`,
/// so only the clipped excess carries Monte Carlo noise.
pub fn estimate_clip_means<M: MarkovModel>(
    model: &M,
    scheme: &BlockScheme,
    upto: u32,
    draws: usize,
    known_mean: Option<f64>,
    stream: &InnovationStream,
) -> Result<ClipMeans> {
    if draws == 0 {
        return Err(Error::invalid("clip means need at least one draw"));
    }
    let xs = stationary_observables(model, draws, model.default_burn_in(), stream);
    let means = (1..=upto)
        .map(|k| match known_mean {
            Some(mu) => mu + crate::stats::mean(&xs.iter().map(|&x| scheme.clip(x, k) - x).collect::<Vec<_>>()),
            None => crate::stats::mean(&xs.iter().map(|&x| scheme.clip(x, k)).collect::<Vec<_>>()),
        })
        .collect();
    Ok(ClipMeans { means, draws })
}

/// Increments of `S†`: `φ_{h_i}(X_i) − μ_{h_i}` for `i ≥ 2` and `0` at `i = 1`.
pub fn truncated_increments(x: &[f64], scheme: &BlockScheme, clip: &ClipMeans) -> Result<Vec<f64>> {
    x.iter()
        .enumerate()
        .map(|(p, &v)| {
            let i = p as u64 + 1;
            if i == 1 {
                return Ok(0.0);
            }
            let k = block_index(i)?;
            Ok(scheme.clip(v, k) - clip.get(k)?)
        })
        .collect()
}

/// `S†_i` for `i = 1 ..= x.len()`.
pub fn truncated_path(x: &[f64], scheme: &BlockScheme, clip: &ClipMeans) -> Result<Vec<f64>> {
    Ok(cumulative(&truncated_increments(x, scheme, clip)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdepOptions {
    pub inner: usize,
    pub burn_in: Option<usize>,
}

/// The `m_k`-dependent stage of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct MdepPath {
    /// `X̃_{h_i, i}`, with `0` at `i = 1`.
    pub increments: Vec<f64>,
    pub s_tilde: Vec<f64>,
    /// Mean inner-resample variance of the conditional means.
    pub inner_var: f64,
}

/// `S̃` along a stored innovation sequence: each `X̃_{k,i}` averages
/// `φ_k(X_i)` over `inner` pasts regenerated before `ε_{i−m_k}`.
pub fn mdep_path<M: MarkovModel>(
    model: &M,
    innovations: &[M::Innovation],
    scheme: &BlockScheme,
    clip: &ClipMeans,
    opts: MdepOptions,
    stream: &InnovationStream,
) -> Result<MdepPath> {
    if !model.supports_replay() {
        return Err(Error::Capability("model cannot replay innovation windows".into()));
    }
    if opts.inner == 0 {
        return Err(Error::invalid("need at least one inner resample"));
    }
    let burn = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    let mut inner_var = 0.0;
    let mut increments = Vec::with_capacity(innovations.len());
    for i in 1..=innovations.len() {
        if i == 1 {
            increments.push(0.0);
            continue;
        }
        let k = block_index(i as u64)?;
        let m = scheme.lag(k) as usize;
        let start = i.saturating_sub(m).max(1);
        let (mean, var) = conditional_clip_mean(
            model,
            burn,
            &innovations[start - 1..i],
            scheme.level(k),
            opts.inner,
            &stream.child(i as u64),
        );
        inner_var += var;
        increments.push(mean - clip.get(k)?);
    }
    let count = innovations.len().saturating_sub(1).max(1);
    Ok(MdepPath {
        s_tilde: cumulative(&increments),
        increments,
        inner_var: inner_var / count as f64,
    })
}

/// `max_ℓ |W_{k,ℓ} − W̃_{k,ℓ}|` for every block `k` fully or partly
/// covered by the increments, as `(k, error)`.
pub fn block_errors(dag: &[f64], tilde: &[f64], scheme: &BlockScheme) -> Result<Vec<(u32, f64)>> {
    if dag.len() != tilde.len() {
        return Err(Error::invalid("stage increments differ in length"));
    }
    let n = dag.len() as u64;
    if n < 2 {
        return Ok(Vec::new());
    }
    let top = block_index(n)?;
    Ok((1..=top)
        .map(|k| {
            let (lo, hi) = scheme.block_range(k);
            let hi = hi.min(n);
            let mut run = 0.0f64;
            let mut worst = 0.0f64;
            for i in lo..=hi {
                let p = i as usize - 1;
                run += dag[p] - tilde[p];
                worst = worst.max(run.abs());
            }
            (k, worst)
        })
        .collect())
}

pub(crate) fn cumulative(x: &[f64]) -> Vec<f64> {
    x.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}
