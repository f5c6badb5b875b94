use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::matrix::RunningProduct;
use crate::models::{step_projective, InnovationStream, MarkovModel, MatrixModel};
use crate::numlin::{angle_delta, ProjectivePoint};

/// Samples with `|⟨A_n x, y⟩| ≤ CENSOR·‖A_n x‖‖y‖` are censored: the
/// product-side logarithm loses too many digits to check the identity.
pub const CENSOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub n: usize,
    pub samples: usize,
    pub censored: usize,
    /// Quantiles of `|log δ(A_n·x̄, ȳ)|`, censored samples counted as `+∞`.
    pub q50: f64,
    pub q95: f64,
    /// `3 (log n)^{1/γ}`.
    pub envelope: f64,
    /// Max over uncensored samples of the identity residual.
    pub identity_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub identity_err: f64,
    pub within_envelope: bool,
}

/// Both sides of `log|⟨A_n x, y⟩| = log‖A_n x‖ + log‖y‖ + log δ(A_n·x̄, ȳ)`:
/// the left from the running product, the right from the cocycle sum along
/// the direction chain.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Sides {
    lhs: f64,
    rhs: f64,
    log_delta: f64,
    censored: bool,
}

fn sides(prod: &RunningProduct, x: &DVector<f64>, y: &DVector<f64>, w: &ProjectivePoint, cocycle: f64) -> Sides {
    let px = &prod.p * x;
    let inner = y.dot(&px);
    let lhs = prod.log_scale + inner.abs().ln();
    // cocycle = log(‖A_n x‖_N / ‖x‖_N) with w the N-unit direction of A_n x
    let norm = w.norm_kind();
    let log_ax = cocycle + norm.of(x).ln() + w.rep().norm().ln();
    let yhat = ProjectivePoint::new(y.clone(), norm).ok();
    let delta = match yhat {
        Some(yp) => angle_delta(w, &yp),
        // y outside the positive cone: use the raw Euclidean cosine
        None => (w.rep().dot(y) / (w.rep().norm() * y.norm())).abs(),
    };
    let log_delta = delta.ln();
    let rhs = log_ax + y.norm().ln() + log_delta;
    let censored = !(inner.abs() > CENSOR * px.norm() * y.norm()) || delta == 0.0;
    Sides {
        lhs,
        rhs,
        log_delta,
        censored,
    }
}

fn quantile_with_censoring(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if sorted[hi].is_infinite() {
        return f64::INFINITY;
    }
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Path-wise check of the coefficient decomposition and the growth of
/// `|log δ(A_n·x̄, ȳ)|` against `3 (log n)^{1/γ}`.
pub fn coefficient_alignment(
    model: &MatrixModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    n_grid: &[usize],
    replicates: usize,
    stream: &InnovationStream,
) -> Result<AlignmentReport> {
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return Err(Error::invalid("probe vectors do not match the dimension"));
    }
    if (x.norm() - 1.0).abs() > 1e-12 || (y.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("x and y must be unit vectors"));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] < 2 || replicates == 0 {
        return Err(Error::invalid("need a strictly increasing n grid from 2 and at least one replicate"));
    }
    let start = ProjectivePoint::new(x.clone(), model.norm_kind())?;
    let horizon = *n_grid.last().unwrap();
    let base = stream.fork("alignment");
    let paths: Vec<Vec<Sides>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<Sides>> {
            let mut s = base.child(r);
            let mut prod = RunningProduct::identity(d);
            let mut w = start.clone();
            let mut cocycle = 0.0;
            let mut out = Vec::with_capacity(n_grid.len());
            let mut next = 0;
            for k in 1..=horizon {
                let g = model.draw(&mut s);
                let (nw, inc) = step_projective(&w, &g);
                w = nw;
                cocycle += inc;
                prod.left_mul(g.entries(), k)?;
                if n_grid[next] == k {
                    out.push(sides(&prod, x, y, &w, cocycle));
                    next += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let gamma = model.law().moment_index();
    let mut rows = Vec::with_capacity(n_grid.len());
    for (j, &n) in n_grid.iter().enumerate() {
        let cells: Vec<Sides> = paths.iter().map(|p| p[j]).collect();
        let censored = cells.iter().filter(|c| c.censored).count();
        let identity_err = cells
            .iter()
            .filter(|c| !c.censored)
            .map(|c| (c.lhs - c.rhs).abs())
            .fold(0.0, f64::max);
        let mut abs: Vec<f64> = cells
            .iter()
            .map(|c| if c.censored { f64::INFINITY } else { c.log_delta.abs() })
            .collect();
        abs.sort_by(f64::total_cmp);
        rows.push(AlignmentRow {
            n,
            samples: cells.len(),
            censored,
            q50: quantile_with_censoring(&abs, 0.5),
            q95: quantile_with_censoring(&abs, 0.95),
            envelope: 3.0 * (n as f64).ln().powf(1.0 / gamma),
            identity_err,
        });
    }
    Ok(AlignmentReport {
        identity_err: rows.iter().map(|r| r.identity_err).fold(0.0, f64::max),
        within_envelope: rows.iter().all(|r| r.q95 <= r.envelope),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MatrixLaw;
    use crate::numlin::GroupElement;

    fn unit(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v).normalize()
    }

    #[test]
    fn aligned_target_has_zero_delta_term() {
        // A_n e₁ = 2ⁿ e₁, so y = e₁ is the image direction
        let model = MatrixModel::new(MatrixLaw::single(GroupElement::diagonal(&[2.0, 0.5]).unwrap()));
        let e1 = unit(&[1.0, 0.0]);
        let r = coefficient_alignment(&model, &e1, &e1, &[2, 4, 8], 3, &InnovationStream::new(1)).unwrap();
        for row in &r.rows {
            assert_eq!(row.censored, 0);
            assert!(row.q95 < 1e-15);
        }
        assert!(r.identity_err < 1e-12);
    }

    #[test]
    fn identity_law_keeps_delta_constant() {
        let model = MatrixModel::new(MatrixLaw::single(GroupElement::identity(3)));
        let x = unit(&[1.0, 2.0, 2.0]);
        let y = unit(&[0.0, 1.0, -1.0]);
        let y2 = unit(&[1.0, 1.0, 0.0]);
        let r = coefficient_alignment(&model, &x, &y2, &[2, 10, 100], 2, &InnovationStream::new(2)).unwrap();
        let want = (x.dot(&y2)).abs().ln().abs();
        assert!(r.rows.iter().all(|row| (row.q50 - want).abs() < 1e-12));
        // ⟨x, y⟩ = 0 exactly: every sample is censored
        let r = coefficient_alignment(&model, &x, &y, &[2, 10], 2, &InnovationStream::new(2)).unwrap();
        assert!(r.rows.iter().all(|row| row.censored == 2 && row.q95.is_infinite()));
    }

    #[test]
    fn random_law_satisfies_the_identity() {
        let model = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 1.0).unwrap());
        let x = unit(&[1.0, 0.0, 0.0]);
        let y = unit(&[0.3, 1.0, 0.0]);
        let r = coefficient_alignment(&model, &x, &y, &[10, 100, 300], 200, &InnovationStream::new(3)).unwrap();
        assert!(r.identity_err < 1e-9, "{}", r.identity_err);
        assert!(r.within_envelope);
    }
}
