use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{block_index, BlockScheme};
use crate::error::{Error, Result};
use crate::harness::{fit_rate_envelope, RateEnvelopeFit};
use crate::models::InnovationStream;
use crate::stats;

/// Lower-triangular Cholesky factor of a banded symmetric Toeplitz matrix,
/// stored row by row as the `m + 1` entries on and left of the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCholesky {
    band: usize,
    rows: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// Factor of the `n × n` matrix `T_{ij} = γ_{|i−j|}`, zero beyond lag
    /// `gamma.len() − 1`.
    pub fn toeplitz(gamma: &[f64], n: usize) -> Result<Self> {
        if gamma.is_empty() {
            return Err(Error::invalid("empty covariance sequence"));
        }
        let band = gamma.len() - 1;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i.saturating_sub(band);
            let mut row = vec![0.0; i - lo + 1];
            for j in lo..i {
                let prev = &rows[j];
                let plo = j.saturating_sub(band);
                let dot: f64 = (lo.max(plo)..j).map(|l| row[l - lo] * prev[l - plo]).sum();
                row[j - lo] = (gamma[i - j] - dot) / prev[j - plo];
            }
            let diag = gamma[0] - row[..i - lo].iter().map(|v| v * v).sum::<f64>();
            if !(diag > 0.0) {
                return Err(Error::numerical(
                    "asip",
                    "gaussian_coupling",
                    format!("covariance matrix not positive definite at row {i}"),
                ));
            }
            row[i - lo] = diag.sqrt();
            rows.push(row);
        }
        Ok(BandedCholesky { band, rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// `L⁻¹ y`.
    pub fn whiten(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(Error::invalid("vector length differs from factor size"));
        }
        let mut z = vec![0.0; y.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let lo = i.saturating_sub(self.band);
            let dot: f64 = (lo..i).map(|j| row[j - lo] * z[j]).sum();
            z[i] = (y[i] - dot) / row[i - lo];
        }
        Ok(z)
    }

    /// `L z`.
    pub fn color(&self, z: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let lo = i.saturating_sub(self.band);
                (lo..=i).map(|j| row[j - lo] * z[j]).sum()
            })
            .collect()
    }
}

/// How the `S̃` increments of a coupled block are mapped to Gaussians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CouplingMethod {
    /// Whiten the block with the Cholesky factor of its `γ̃` Toeplitz
    /// matrix and scale the white sequence by the root of the block's
    /// variance rate `γ̃_0 + 2Σγ̃_i`.
    Whitening,
    /// Sub-blocks of length `⌈3^{k/2}⌉` separated by `m_k` gaps; each
    /// sub-block sum is sent through its rank in a calibration ensemble.
    SubBlockQuantile { calibration: usize },
}

/// `γ̃_{k,0..=m_k}` for one block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCovariance {
    pub k: u32,
    pub gamma: Vec<f64>,
}

impl BlockCovariance {
    /// Variance rate `γ̃_0 + 2 Σ_{i≥1} γ̃_i` of the block sequence.
    pub fn nu(&self) -> f64 {
        match self.gamma.split_first() {
            Some((g0, rest)) => g0 + 2.0 * rest.iter().sum::<f64>(),
            None => 0.0,
        }
    }
}

/// `f(ω) = γ_0 + 2 Σ γ_i cos(iω)`.
pub fn spectral_density(gamma: &[f64], omega: f64) -> f64 {
    match gamma.split_first() {
        Some((g0, rest)) => {
            g0 + 2.0
                * rest
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * ((i + 1) as f64 * omega).cos())
                    .sum::<f64>()
        }
        None => 0.0,
    }
}

/// Moves a band-limited covariance sequence to one whose spectral density
/// stays above `1e-2 γ_0`, by alternately flooring the density on a
/// frequency grid and truncating back to the band. Returns the sequence and
/// whether it changed.
pub fn repair_covariance(gamma: &[f64]) -> (Vec<f64>, bool) {
    let Some(&g0) = gamma.first() else {
        return (Vec::new(), false);
    };
    let floor = 1e-2 * g0;
    let grid = 16 * gamma.len();
    let omegas: Vec<f64> = (0..grid).map(|j| std::f64::consts::PI * j as f64 / (grid - 1).max(1) as f64).collect();
    let min_density = |g: &[f64]| omegas.iter().map(|&w| spectral_density(g, w)).fold(f64::INFINITY, f64::min);
    if g0 <= 0.0 || min_density(gamma) >= floor {
        return (gamma.to_vec(), false);
    }
    let mut g = gamma.to_vec();
    let full = 2 * grid;
    for _ in 0..200 {
        // floored density on the full circle, then the band's Fourier coefficients
        let f: Vec<f64> = (0..full)
            .map(|j| spectral_density(&g, 2.0 * std::f64::consts::PI * j as f64 / full as f64).max(floor))
            .collect();
        for (i, gi) in g.iter_mut().enumerate() {
            let w = 2.0 * std::f64::consts::PI * i as f64 / full as f64;
            *gi = f.iter().enumerate().map(|(j, fj)| fj * (w * j as f64).cos()).sum::<f64>() / full as f64;
        }
        if min_density(&g) >= 0.5 * floor {
            break;
        }
    }
    (g, true)
}

pub fn sub_block_len(k: u32) -> u64 {
    3f64.powf(k as f64 / 2.0).ceil() as u64
}

/// `(start, len, coupled)` segments of block `k`, 1-based inclusive starts:
/// big sub-blocks are coupled, gaps and a short remainder are not.
pub fn sub_block_layout(scheme: &BlockScheme, k: u32) -> Result<Vec<(u64, u64, bool)>> {
    let (lo, hi) = scheme.block_range(k);
    let big = sub_block_len(k);
    let gap = scheme.lag(k);
    if hi - lo + 1 < big {
        return Err(Error::Scheme {
            block: k,
            detail: format!("block of length {} is shorter than one sub-block of length {big}", hi - lo + 1),
        });
    }
    let mut out = Vec::new();
    let mut pos = lo;
    while pos <= hi {
        let rest = hi - pos + 1;
        if rest >= big {
            out.push((pos, big, true));
            pos += big;
        } else {
            out.push((pos, rest, false));
            break;
        }
        if pos <= hi {
            let len = gap.min(hi - pos + 1);
            out.push((pos, len, false));
            pos += len;
        }
    }
    Ok(out)
}

enum BlockPlan {
    /// Factor and the scale `f(0)^{1/2}` of the covariance it factors.
    Whiten(BandedCholesky, f64),
    Quantile { big: u64, sorted: Vec<f64> },
}

/// Everything the per-path coupling needs, shared by all paths.
pub struct CouplingPlan {
    scheme: BlockScheme,
    nu_target: f64,
    blocks: BTreeMap<u32, BlockPlan>,
    pub method: CouplingMethod,
    /// Blocks whose `γ̃` needed [`repair_covariance`].
    pub repaired: Vec<u32>,
}

impl CouplingPlan {
    /// Whitening plan for blocks `k0 ..= h_n`; `covs` must cover those blocks.
    pub fn whitening(scheme: &BlockScheme, covs: &[BlockCovariance], nu_target: f64, n: u64) -> Result<Self> {
        check_target(nu_target)?;
        let mut blocks = BTreeMap::new();
        let mut repaired = Vec::new();
        for k in coupled_blocks(scheme, n)? {
            let cov = covs
                .iter()
                .find(|c| c.k == k)
                .ok_or_else(|| Error::invalid(format!("no covariances for block {k}")))?;
            let (lo, hi) = scheme.block_range(k);
            let len = (hi.min(n) - lo + 1) as usize;
            let plan = if nu_target == 0.0 || cov.gamma.first().is_none_or(|&g| g <= 0.0) {
                BlockPlan::Whiten(BandedCholesky::toeplitz(&[1.0], len)?, nu_target.sqrt())
            } else {
                let (gamma, changed) = repair_covariance(&cov.gamma);
                if changed {
                    repaired.push(k);
                }
                let scale = spectral_density(&gamma, 0.0).max(0.0).sqrt();
                BlockPlan::Whiten(BandedCholesky::toeplitz(&gamma, len)?, scale)
            };
            blocks.insert(k, plan);
        }
        Ok(CouplingPlan {
            scheme: scheme.clone(),
            nu_target,
            blocks,
            method: CouplingMethod::Whitening,
            repaired,
        })
    }

    /// Quantile plan; `calibration[k]` holds same-law sub-block sums of
    /// block `k`.
    pub fn sub_block_quantile(
        scheme: &BlockScheme,
        calibration: &BTreeMap<u32, Vec<f64>>,
        nu_target: f64,
        n: u64,
    ) -> Result<Self> {
        check_target(nu_target)?;
        let mut blocks = BTreeMap::new();
        let mut size = usize::MAX;
        for k in coupled_blocks(scheme, n)? {
            sub_block_layout(scheme, k)?;
            let mut sorted = calibration
                .get(&k)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("no calibration sums for block {k}")))?;
            if sorted.is_empty() {
                return Err(Error::invalid(format!("empty calibration ensemble for block {k}")));
            }
            sorted.sort_by(f64::total_cmp);
            size = size.min(sorted.len());
            blocks.insert(
                k,
                BlockPlan::Quantile {
                    big: sub_block_len(k),
                    sorted,
                },
            );
        }
        Ok(CouplingPlan {
            scheme: scheme.clone(),
            nu_target,
            blocks,
            method: CouplingMethod::SubBlockQuantile {
                calibration: if size == usize::MAX { 0 } else { size },
            },
            repaired: Vec::new(),
        })
    }

    pub fn nu_target(&self) -> f64 {
        self.nu_target
    }

    /// Gaussian increments `N_1 … N_n` coupled to the `S̃` increments.
    pub fn couple(&self, tilde: &[f64], stream: &InnovationStream) -> Result<Vec<f64>> {
        let n = tilde.len() as u64;
        let sd = self.nu_target.sqrt();
        let mut free = stream.fork("uncoupled");
        let mut g: Vec<f64> = (0..n).map(|_| sd * free.sample::<f64, _>(StandardNormal)).collect();
        if n < 2 {
            return Ok(g);
        }
        for (&k, plan) in &self.blocks {
            let (lo, hi) = self.scheme.block_range(k);
            if lo > n {
                break;
            }
            let hi = hi.min(n);
            let y = &tilde[lo as usize - 1..hi as usize];
            let out = &mut g[lo as usize - 1..hi as usize];
            match plan {
                BlockPlan::Whiten(chol, scale) => {
                    if chol.dim() != y.len() {
                        return Err(Error::invalid(format!("plan for block {k} built for another horizon")));
                    }
                    // y = L ξ, so the partial sums of y and of f(0)^{1/2} ξ
                    // differ only through the first and last rows of the band
                    for (o, z) in out.iter_mut().zip(chol.whiten(y)?) {
                        *o = scale * z;
                    }
                }
                BlockPlan::Quantile { big, sorted } => {
                    let mut rng = stream.fork("quantile").child(k as u64);
                    for (start, len, coupled) in sub_block_layout(&self.scheme, k)? {
                        if !coupled || start + len - 1 > hi {
                            continue;
                        }
                        debug_assert_eq!(len, *big);
                        let a = (start - lo) as usize;
                        let seg = &y[a..a + len as usize];
                        let total: f64 = seg.iter().sum();
                        let rank = sorted.partition_point(|&c| c < total) as f64;
                        let u = (rank + rng.random::<f64>()) / (sorted.len() as f64 + 1.0);
                        let z = sd * (len as f64).sqrt() * std_normal().inverse_cdf(u);
                        // iid N(0, ν) increments conditioned on their sum being z
                        let fresh: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                        let bar = stats::mean(&fresh);
                        for (o, f) in out[a..a + len as usize].iter_mut().zip(&fresh) {
                            *o = z / len as f64 + sd * (f - bar);
                        }
                    }
                }
            }
        }
        Ok(g)
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn check_target(nu: f64) -> Result<()> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::invalid(format!("target variance must be finite and nonnegative, got {nu}")));
    }
    Ok(())
}

/// Blocks `k0 ..= h_n` that receive a genuine coupling.
pub fn coupled_blocks(scheme: &BlockScheme, n: u64) -> Result<Vec<u32>> {
    if n < 2 {
        return Ok(Vec::new());
    }
    let top = block_index(n)?;
    Ok((scheme.k0..=top).collect())
}

/// Increments of the three proof stages of one path, index `i − 1`
/// holding step `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageIncrements {
    pub x: Vec<f64>,
    pub dag: Vec<f64>,
    pub tilde: Vec<f64>,
}

/// Per-path distances at the grid points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCoupling {
    pub d: Vec<f64>,
    pub trunc_err: Vec<f64>,
    pub mdep_err: Vec<f64>,
    pub tilde_gap: Vec<f64>,
    /// `(S_n, S†_n, S̃_n, G_n)` at the grid points.
    pub sums: Vec<[f64; 4]>,
    pub telescoping_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub n_grid: Vec<u64>,
    pub method: CouplingMethod,
    pub nu_target: f64,
    /// Path means of `D_n = max_{i≤n} |S_i − G_i|`.
    pub d: Vec<f64>,
    pub d_stderr: Vec<f64>,
    pub trunc_err: Vec<f64>,
    pub mdep_err: Vec<f64>,
    pub tilde_gap: Vec<f64>,
    pub paths: Vec<PathCoupling>,
    pub fit: Option<RateEnvelopeFit>,
    pub telescoping_violations: usize,
}

impl CouplingResult {
    pub fn d_per_path(&self) -> Vec<Vec<f64>> {
        self.paths.iter().map(|p| p.d.clone()).collect()
    }

    pub fn trunc_per_path(&self) -> Vec<Vec<f64>> {
        self.paths.iter().map(|p| p.trunc_err.clone()).collect()
    }
}

/// Couples one path and measures it on `n_grid`.
pub fn couple_path(
    stages: &StageIncrements,
    plan: &CouplingPlan,
    n_grid: &[u64],
    stream: &InnovationStream,
) -> Result<PathCoupling> {
    let n = stages.x.len();
    if stages.dag.len() != n || stages.tilde.len() != n {
        return Err(Error::invalid("stage increments differ in length"));
    }
    if n_grid.iter().any(|&g| g == 0 || g as usize > n) {
        return Err(Error::invalid("grid point outside the path"));
    }
    let g = plan.couple(&stages.tilde, stream)?;
    let (mut s, mut sd, mut st, mut sg) = (0.0, 0.0, 0.0, 0.0);
    let (mut d, mut te, mut me, mut tg) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut violations = 0;
    let mut out = PathCoupling {
        d: Vec::with_capacity(n_grid.len()),
        trunc_err: Vec::with_capacity(n_grid.len()),
        mdep_err: Vec::with_capacity(n_grid.len()),
        tilde_gap: Vec::with_capacity(n_grid.len()),
        sums: Vec::with_capacity(n_grid.len()),
        telescoping_violations: 0,
    };
    let mut next = 0;
    for i in 0..n {
        s += stages.x[i];
        sd += stages.dag[i];
        st += stages.tilde[i];
        sg += g[i];
        let (a, b, c) = ((s - sd).abs(), (sd - st).abs(), (st - sg).abs());
        let total = (s - sg).abs();
        // one rounding per subtraction and per addition
        let slack = 4.0 * f64::EPSILON * (s.abs() + sd.abs() + st.abs() + sg.abs());
        if total > a + b + c + slack {
            violations += 1;
        }
        d = d.max(total);
        te = te.max(a);
        me = me.max(b);
        tg = tg.max(c);
        while next < n_grid.len() && n_grid[next] as usize == i + 1 {
            out.d.push(d);
            out.trunc_err.push(te);
            out.mdep_err.push(me);
            out.tilde_gap.push(tg);
            out.sums.push([s, sd, st, sg]);
            next += 1;
        }
    }
    out.telescoping_violations = violations;
    Ok(out)
}

/// Couples every path with `plan` and aggregates the distances.
pub fn gaussian_coupling(
    paths: &[StageIncrements],
    plan: &CouplingPlan,
    n_grid: &[u64],
    bootstrap: usize,
    stream: &InnovationStream,
) -> Result<CouplingResult> {
    if paths.is_empty() {
        return Err(Error::invalid("no paths to couple"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n grid must be strictly increasing"));
    }
    let coupled: Vec<PathCoupling> = paths
        .par_iter()
        .enumerate()
        .map(|(r, p)| couple_path(p, plan, n_grid, &stream.child(r as u64)))
        .collect::<Result<_>>()?;
    let column = |f: &dyn Fn(&PathCoupling) -> &Vec<f64>, q: usize| -> Vec<f64> {
        coupled.iter().map(|p| f(p)[q]).collect()
    };
    let means = |f: &dyn Fn(&PathCoupling) -> &Vec<f64>| -> Vec<f64> {
        (0..n_grid.len()).map(|q| stats::mean(&column(f, q))).collect()
    };
    let d = means(&|p| &p.d);
    let d_stderr = (0..n_grid.len()).map(|q| stats::mean_stderr(&column(&|p| &p.d, q)).1).collect();
    let d_paths: Vec<Vec<f64>> = coupled.iter().map(|p| p.d.clone()).collect();
    let fit = fit_rate_envelope(n_grid, &d_paths, bootstrap, &stream.fork("bootstrap")).ok();
    Ok(CouplingResult {
        n_grid: n_grid.to_vec(),
        method: plan.method,
        nu_target: plan.nu_target,
        trunc_err: means(&|p| &p.trunc_err),
        mdep_err: means(&|p| &p.mdep_err),
        tilde_gap: means(&|p| &p.tilde_gap),
        d,
        d_stderr,
        telescoping_violations: coupled.iter().map(|p| p.telescoping_violations).sum(),
        paths: coupled,
        fit,
    })
}

/// Same-law sub-block sums of iid `N(0, 1)` increments.
pub fn gaussian_calibration(scheme: &BlockScheme, n: u64, size: usize, stream: &InnovationStream) -> Result<BTreeMap<u32, Vec<f64>>> {
    coupled_blocks(scheme, n)?
        .into_iter()
        .map(|k| {
            let len = sub_block_len(k);
            let mut s = stream.child(k as u64);
            let sums = (0..size)
                .map(|_| (0..len).map(|_| s.sample::<f64, _>(StandardNormal)).sum())
                .collect();
            Ok((k, sums))
        })
        .collect()
}

/// Mean `D_n` of the coupled control and of an uncoupled baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub n_grid: Vec<u64>,
    pub coupled: Vec<f64>,
    pub baseline: Vec<f64>,
}

/// Runs the coupling on iid `N(0, 1)` inputs, with covariances or
/// calibration sums estimated from independent draws, and compares it with
/// an independent Gaussian walk of the same variance.
pub fn gaussian_control(
    scheme: &BlockScheme,
    n_grid: &[u64],
    paths: usize,
    method: CouplingMethod,
    cov_replicates: usize,
    stream: &InnovationStream,
) -> Result<ControlReport> {
    let n = *n_grid.last().ok_or_else(|| Error::invalid("empty n grid"))?;
    let plan = match method {
        CouplingMethod::Whitening => {
            let mut s = stream.fork("covariance");
            let covs = coupled_blocks(scheme, n)?
                .into_iter()
                .map(|k| {
                    let m = scheme.lag(k) as usize;
                    let rows: Vec<Vec<f64>> = (0..cov_replicates)
                        .map(|_| (0..=m).map(|_| s.sample::<f64, _>(StandardNormal)).collect())
                        .collect();
                    let anchor: Vec<f64> = rows.iter().map(|r| r[0]).collect();
                    let gamma = (0..=m)
                        .map(|i| stats::covariance_stderr(&anchor, &rows.iter().map(|r| r[i]).collect::<Vec<_>>()).0)
                        .collect();
                    BlockCovariance { k, gamma }
                })
                .collect::<Vec<_>>();
            CouplingPlan::whitening(scheme, &covs, 1.0, n)?
        }
        CouplingMethod::SubBlockQuantile { calibration } => {
            let cal = gaussian_calibration(scheme, n, calibration, &stream.fork("calibration"))?;
            CouplingPlan::sub_block_quantile(scheme, &cal, 1.0, n)?
        }
    };
    let inputs: Vec<StageIncrements> = (0..paths as u64)
        .map(|r| {
            let mut s = stream.fork("input").child(r);
            let x: Vec<f64> = (0..n).map(|_| s.sample::<f64, _>(StandardNormal)).collect();
            StageIncrements {
                dag: x.clone(),
                tilde: x.clone(),
                x,
            }
        })
        .collect();
    let coupled = gaussian_coupling(&inputs, &plan, n_grid, 0, &stream.fork("couple"))?;
    let baseline: Vec<Vec<f64>> = inputs
        .par_iter()
        .enumerate()
        .map(|(r, p)| {
            let mut s = stream.fork("baseline").child(r as u64);
            let mut run = (0.0, 0.0, 0.0f64);
            let mut out = Vec::with_capacity(n_grid.len());
            let mut next = 0;
            for (i, &x) in p.x.iter().enumerate() {
                run.0 += x;
                run.1 += s.sample::<f64, _>(StandardNormal);
                run.2 = run.2.max((run.0 - run.1).abs());
                while next < n_grid.len() && n_grid[next] as usize == i + 1 {
                    out.push(run.2);
                    next += 1;
                }
            }
            out
        })
        .collect();
    Ok(ControlReport {
        n_grid: n_grid.to_vec(),
        coupled: coupled.d,
        baseline: (0..n_grid.len())
            .map(|q| stats::mean(&baseline.iter().map(|b| b[q]).collect::<Vec<_>>()))
            .collect(),
    })
}
