use rayon::prelude::*;
use serde::Serialize;

use super::ExceedanceCell;
use crate::error::{Error, Result};
use crate::models::matrix::RunningProduct;
use crate::models::{InnovationStream, MarkovModel, MatrixModel};
use crate::numlin::{l1_operator_norm, matrix_spectral_radius, matrix_v_min, top_singular_value, NormKind};
use crate::stats;

/// Slack for the deterministic chain `log v ≤ log ρ ≤ log‖·‖`.
const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub ell: usize,
    /// Cell whose count is the number of products with
    /// `log ρ(A_n) − log‖A_n‖ ≥ −εℓ`.
    pub event: ExceedanceCell,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralGapReport {
    pub epsilon: f64,
    pub rows: Vec<GapRow>,
    /// `(n, Kendall τ of (ℓ, failure probability))`.
    pub trend: Vec<(usize, f64)>,
    /// Most negative observed `log ρ − log‖·‖` per `n`.
    pub min_gap: Vec<(usize, f64)>,
    /// Products violating `v ≤ ρ ≤ ‖·‖` (the lower bound is checked for
    /// positive laws only).
    pub bound_violations: usize,
}

/// Empirical `P(log ρ(A_n) − log‖A_n‖ ≥ −εℓ)` over a grid of `(n, ℓ ≤ n)`.
pub fn spectral_radius_gap(
    model: &MatrixModel,
    n_grid: &[usize],
    ell_grid: &[usize],
    epsilon: f64,
    replicates: usize,
    stream: &InnovationStream,
) -> Result<SpectralGapReport> {
    if n_grid.is_empty() || ell_grid.is_empty() || replicates == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("need n and ell grids, epsilon > 0 and at least one replicate"));
    }
    let d = model.dim();
    let norm = model.norm_kind();
    let mut rows = Vec::new();
    let mut trend = Vec::new();
    let mut min_gap = Vec::new();
    let mut bound_violations = 0;
    for &n in n_grid {
        let base = stream.fork("spectral-gap").child(n as u64);
        let runs: Vec<(f64, bool)> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| -> Result<(f64, bool)> {
                let mut s = base.child(r);
                let mut prod = RunningProduct::identity(d);
                for k in 1..=n {
                    prod.left_mul(model.draw(&mut s).entries(), k)?;
                }
                // the common scale cancels in the gap
                let p = &prod.p;
                let rho = matrix_spectral_radius(p)?.ln();
                let nrm = match norm {
                    NormKind::Euclidean => top_singular_value(p),
                    NormKind::L1 => l1_operator_norm(p),
                }
                .ln();
                let mut bad = rho > nrm + BOUND_TOL;
                if norm == NormKind::L1 {
                    bad |= matrix_v_min(p).ln() > rho + BOUND_TOL;
                }
                Ok((rho - nrm, bad))
            })
            .collect::<Result<_>>()?;
        bound_violations += runs.iter().filter(|r| r.1).count();
        min_gap.push((n, runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min)));
        let ells: Vec<usize> = ell_grid.iter().copied().filter(|&l| l <= n).collect();
        let mut fails = Vec::new();
        for &ell in &ells {
            let count = runs.iter().filter(|r| r.0 >= -epsilon * ell as f64).count();
            let event = ExceedanceCell::new(n, format!("ell={ell}"), count, replicates);
            fails.push(1.0 - event.point());
            rows.push(GapRow { n, ell, event });
        }
        let xs: Vec<f64> = ells.iter().map(|&l| l as f64).collect();
        trend.push((n, stats::kendall_tau(&xs, &fails)));
    }
    Ok(SpectralGapReport {
        epsilon,
        rows,
        trend,
        min_gap,
        bound_violations,
    })
}
