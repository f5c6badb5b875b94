use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{step_projective, InnovationStream, MarkovModel, MatrixModel};
use crate::numlin::{proj_distance, ProjectivePoint};
use crate::stats;

/// Per-`k` maximum over probe pairs of `E|X_{k,x̄} − X_{k,ȳ}|`, a lower
/// bound on the supremum over all pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SupDeltaEstimate {
    pub k_grid: Vec<usize>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Index of the maximizing pair at each `k`.
    pub argmax: Vec<usize>,
}

fn check_pairs(pairs: &[(ProjectivePoint, ProjectivePoint)], model: &MatrixModel) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("need at least one probe pair"));
    }
    for (x, y) in pairs {
        if x.dim() != model.dim() || y.dim() != model.dim() {
            return Err(Error::invalid("probe dimension does not match the law"));
        }
    }
    Ok(())
}

/// Both chains of a pair are driven by the same matrices, so they share
/// `A_{k−1}` by construction.
pub fn estimate_sup_delta_pairs(
    model: &MatrixModel,
    k_grid: &[usize],
    pairs: &[(ProjectivePoint, ProjectivePoint)],
    replicates: usize,
    stream: &InnovationStream,
) -> Result<SupDeltaEstimate> {
    check_pairs(pairs, model)?;
    if replicates < 2 || k_grid.contains(&0) {
        return Err(Error::invalid("need replicates >= 2 and k >= 1"));
    }
    let horizon = k_grid.iter().copied().max().unwrap_or(0);
    // rows[r][p][j]: |X_{k_j,x̄_p} − X_{k_j,ȳ_p}| in replicate r
    let rows: Vec<Vec<Vec<f64>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            pairs
                .iter()
                .enumerate()
                .map(|(p, (x, y))| {
                    let mut s = stream.child(r).child(p as u64);
                    let (mut wx, mut wy) = (x.clone(), y.clone());
                    let mut out = vec![0.0; k_grid.len()];
                    for k in 1..=horizon {
                        let g = model.draw(&mut s);
                        let (nx, ix) = step_projective(&wx, &g);
                        let (ny, iy) = step_projective(&wy, &g);
                        for (slot, _) in out.iter_mut().zip(k_grid).filter(|(_, &kk)| kk == k) {
                            *slot = (ix - iy).abs();
                        }
                        wx = nx;
                        wy = ny;
                    }
                    out
                })
                .collect()
        })
        .collect();
    let mut estimate = Vec::with_capacity(k_grid.len());
    let mut stderr = Vec::with_capacity(k_grid.len());
    let mut argmax = Vec::with_capacity(k_grid.len());
    for j in 0..k_grid.len() {
        let mut best = (f64::NEG_INFINITY, 0.0, 0);
        for p in 0..pairs.len() {
            let col: Vec<f64> = rows.iter().map(|r| r[p][j]).collect();
            let (m, se) = stats::mean_stderr(&col);
            if m > best.0 {
                best = (m, se, p);
            }
        }
        estimate.push(best.0);
        stderr.push(best.1);
        argmax.push(best.2);
    }
    Ok(SupDeltaEstimate {
        k_grid: k_grid.to_vec(),
        estimate,
        stderr,
        argmax,
    })
}

/// Per-`k` maximum over probe pairs and `j ∈ [k, 2k]` of
/// `P(log d(A_{j−1}·x̄, A_{j−1}·ȳ) ≥ −ℓk)`, with Wilson intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProbe {
    pub k_grid: Vec<usize>,
    pub ell: f64,
    pub probability: Vec<f64>,
    pub ci: Vec<(f64, f64)>,
    pub replicates: usize,
}

/// `log d(x̄, x̄) = −∞`, so coinciding directions never count as exceedances.
pub fn contraction_probe(
    model: &MatrixModel,
    k_grid: &[usize],
    ell: f64,
    pairs: &[(ProjectivePoint, ProjectivePoint)],
    replicates: usize,
    stream: &InnovationStream,
) -> Result<ContractionProbe> {
    check_pairs(pairs, model)?;
    if !(ell > 0.0) {
        return Err(Error::invalid("rate ell must be positive"));
    }
    if replicates == 0 || k_grid.contains(&0) {
        return Err(Error::invalid("need replicates >= 1 and k >= 1"));
    }
    let horizon = 2 * k_grid.iter().copied().max().unwrap_or(1);
    // log distance after t steps, t = 0..horizon−1, per replicate and pair
    let logd: Vec<Vec<Vec<f64>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            pairs
                .iter()
                .enumerate()
                .map(|(p, (x, y))| {
                    let mut s = stream.child(r).child(p as u64);
                    let (mut wx, mut wy) = (x.clone(), y.clone());
                    let mut out = Vec::with_capacity(horizon);
                    out.push(proj_distance(&wx, &wy).ln());
                    for _ in 1..horizon {
                        let g = model.draw(&mut s);
                        wx = step_projective(&wx, &g).0;
                        wy = step_projective(&wy, &g).0;
                        out.push(proj_distance(&wx, &wy).ln());
                    }
                    out
                })
                .collect()
        })
        .collect();
    let mut probability = Vec::with_capacity(k_grid.len());
    let mut ci = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let threshold = -ell * k as f64;
        let mut best = 0usize;
        for p in 0..pairs.len() {
            for j in k..=2 * k {
                let count = logd.iter().filter(|rep| rep[p][j - 1] >= threshold).count();
                best = best.max(count);
            }
        }
        probability.push(best as f64 / replicates as f64);
        ci.push(stats::wilson_interval(best, replicates));
    }
    Ok(ContractionProbe {
        k_grid: k_grid.to_vec(),
        ell,
        probability,
        ci,
        replicates,
    })
}
