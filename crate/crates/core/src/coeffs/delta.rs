use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{stationary_sample, InnovationStream, MarkovModel};
use crate::stats;

/// Monte Carlo estimate of `δ(n) = ‖X_n − X_n*‖₁` on a grid of `n`.
///
/// Grid value `0` stands for `δ(0) = E|X₁|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaEstimate {
    pub n_grid: Vec<usize>,
    pub delta_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicates: usize,
    pub burn_in: usize,
    /// `δ̂` recomputed with twice the burn-in, when requested.
    pub sensitivity: Option<Vec<f64>>,
}

impl DeltaEstimate {
    /// Exact values with zero standard error, e.g. for checking fits.
    pub fn exact(n_grid: Vec<usize>, delta: Vec<f64>) -> Self {
        let m = n_grid.len();
        DeltaEstimate {
            n_grid,
            delta_hat: delta,
            stderr: vec![0.0; m],
            replicates: 0,
            burn_in: 0,
            sensitivity: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOptions {
    pub replicates: usize,
    /// Defaults to the model's own burn-in.
    pub burn_in: Option<usize>,
    pub sensitivity: bool,
}

impl DeltaOptions {
    pub fn new(replicates: usize) -> Self {
        DeltaOptions {
            replicates,
            burn_in: None,
            sensitivity: false,
        }
    }
}

/// `|X_n − X_n*|` at each grid point for one replicate.
///
/// The starts come from two burn-in runs on disjoint sub-streams; the shared
/// innovations begin at step 1.
fn replicate_gaps<M: MarkovModel>(
    model: &M,
    grid: &[usize],
    burn_in: usize,
    stream: &InnovationStream,
    swap: bool,
) -> Vec<f64> {
    let mut sa = stream.fork("start");
    let mut sb = stream.fork("start*");
    if swap {
        std::mem::swap(&mut sa, &mut sb);
    }
    let mut w = stationary_sample(model, burn_in, &mut sa);
    let mut w_star = stationary_sample(model, burn_in, &mut sb);
    let mut shared = stream.fork("shared");
    let horizon = grid.iter().copied().max().unwrap_or(0).max(1);
    let mut out = vec![0.0; grid.len()];
    for n in 1..=horizon {
        let e = model.draw(&mut shared);
        let (nw, x) = model.step(&w, &e);
        let (nws, xs) = model.step(&w_star, &e);
        for (slot, &g) in out.iter_mut().zip(grid) {
            if g == n {
                *slot = (x - xs).abs();
            } else if g == 0 && n == 1 {
                *slot = x.abs();
            }
        }
        w = nw;
        w_star = nws;
    }
    out
}

fn reduce(rows: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<f64>) {
    (0..m)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            stats::mean_stderr(&col)
        })
        .unzip()
}

fn run<M: MarkovModel>(
    model: &M,
    grid: &[usize],
    replicates: usize,
    burn_in: usize,
    stream: &InnovationStream,
    swap: bool,
) -> Vec<Vec<f64>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| replicate_gaps(model, grid, burn_in, &stream.child(r), swap))
        .collect()
}

pub fn estimate_delta<M: MarkovModel>(
    model: &M,
    n_grid: &[usize],
    opts: DeltaOptions,
    stream: &InnovationStream,
) -> Result<DeltaEstimate> {
    estimate_delta_impl(model, n_grid, opts, stream, false)
}

/// Same estimate with the roles of the two starting chains exchanged.
pub fn estimate_delta_swapped<M: MarkovModel>(
    model: &M,
    n_grid: &[usize],
    opts: DeltaOptions,
    stream: &InnovationStream,
) -> Result<DeltaEstimate> {
    estimate_delta_impl(model, n_grid, opts, stream, true)
}

fn estimate_delta_impl<M: MarkovModel>(
    model: &M,
    n_grid: &[usize],
    opts: DeltaOptions,
    stream: &InnovationStream,
    swap: bool,
) -> Result<DeltaEstimate> {
    if opts.replicates < 2 {
        return Err(Error::invalid("estimate_delta needs at least 2 replicates"));
    }
    if n_grid.is_empty() {
        return Err(Error::invalid("empty n grid"));
    }
    let burn_in = opts.burn_in.unwrap_or_else(|| model.default_burn_in());
    let rows = run(model, n_grid, opts.replicates, burn_in, stream, swap);
    let (delta_hat, stderr) = reduce(&rows, n_grid.len());
    let sensitivity = opts.sensitivity.then(|| {
        let rows = run(model, n_grid, opts.replicates, 2 * burn_in, stream, swap);
        reduce(&rows, n_grid.len()).0
    });
    Ok(DeltaEstimate {
        n_grid: n_grid.to_vec(),
        delta_hat,
        stderr,
        replicates: opts.replicates,
        burn_in,
        sensitivity,
    })
}
