use rayon::prelude::*;
use serde::Serialize;

use super::ProbeSet;
use crate::error::{Error, Result};
use crate::models::{step_projective, InnovationStream, MarkovModel, MatrixModel};
use crate::numlin::{angle_delta, ProjectivePoint};
use crate::stats;

/// Mean and standard error of `exp(η |log δ|^γ)`; `None` when a term
/// overflows or some `δ` is zero.
pub fn regularity_statistic(deltas: &[f64], eta: f64, gamma: f64) -> Option<(f64, f64)> {
    let terms: Vec<f64> = deltas
        .iter()
        .map(|&d| (eta * d.ln().abs().powf(gamma)).exp())
        .collect();
    if terms.is_empty() || terms.iter().any(|t| !t.is_finite()) {
        return None;
    }
    let (m, se) = stats::mean_stderr(&terms);
    m.is_finite().then_some((m, se))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityRow {
    pub eta: f64,
    pub gamma: f64,
    pub probe: String,
    pub n: usize,
    /// `None` marks a divergent `η`.
    pub statistic: Option<f64>,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stability {
    pub eta: f64,
    /// Max over probes at each `n`.
    pub max_by_n: Vec<(usize, Option<f64>)>,
    /// Max at the last `n` over max at the first.
    pub ratio: Option<f64>,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub rows: Vec<RegularityRow>,
    pub stability: Vec<Stability>,
}

/// `W_n` from the model start for `replicates` independent products, and for
/// every probe `x̄` the mean of `exp(η |log δ(x̄, W_n)|^γ)`.
///
/// The same endpoints serve every `η`.
pub fn regularity_check(
    model: &MatrixModel,
    probes: &ProbeSet,
    etas: &[f64],
    gamma: f64,
    n_grid: &[usize],
    replicates: usize,
    stream: &InnovationStream,
) -> Result<RegularityReport> {
    if etas.iter().any(|&e| !(e > 0.0)) || !(gamma > 0.0) {
        return Err(Error::invalid("need eta > 0 and gamma > 0"));
    }
    if probes.points.is_empty() || n_grid.is_empty() || replicates < 2 {
        return Err(Error::invalid("need probes, an n grid and at least 2 replicates"));
    }
    let mut rows = Vec::new();
    let mut by_eta: Vec<Vec<(usize, Option<f64>)>> = vec![Vec::new(); etas.len()];
    for &n in n_grid {
        let base = stream.fork("regularity").child(n as u64);
        let ends: Vec<ProjectivePoint> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let mut s = base.child(r);
                let mut w = model.reference_start();
                for _ in 0..n {
                    let g = model.draw(&mut s);
                    w = step_projective(&w, &g).0;
                }
                w
            })
            .collect();
        for (e, &eta) in etas.iter().enumerate() {
            let mut best: Option<f64> = Some(f64::NEG_INFINITY);
            for p in &probes.points {
                let deltas: Vec<f64> = ends.iter().map(|w| angle_delta(&p.point, w)).collect();
                let stat = regularity_statistic(&deltas, eta, gamma);
                best = match (best, stat) {
                    (Some(b), Some((v, _))) => Some(b.max(v)),
                    _ => None,
                };
                rows.push(RegularityRow {
                    eta,
                    gamma,
                    probe: p.label.clone(),
                    n,
                    statistic: stat.map(|s| s.0),
                    stderr: stat.map_or(f64::NAN, |s| s.1),
                });
            }
            by_eta[e].push((n, best));
        }
    }
    let stability = etas
        .iter()
        .zip(by_eta)
        .map(|(&eta, max_by_n)| {
            let divergent = max_by_n.iter().any(|m| m.1.is_none());
            let ratio = match (max_by_n.first(), max_by_n.last()) {
                (Some((_, Some(a))), Some((_, Some(b)))) => Some(b / a),
                _ => None,
            };
            Stability {
                eta,
                max_by_n,
                ratio,
                divergent,
            }
        })
        .collect();
    Ok(RegularityReport { rows, stability })
}
