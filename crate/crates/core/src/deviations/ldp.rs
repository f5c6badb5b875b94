use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::ProbeSet;
use crate::error::{Error, Result};
use crate::models::matrix::{lyapunov_estimate, step_projective, RunningProduct};
use crate::models::{stationary_sample, InnovationStream, MarkovModel, MatrixModel};
use crate::numlin::{exterior_square, l1_operator_norm, top_singular_value, NormKind};
use crate::stats;

/// The running quantity whose deviation from its linear drift is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationObservable {
    /// `log‖A_k x‖` for each probe start `x`.
    Cocycle,
    /// `log‖A_k‖`.
    Norm,
    /// `log‖Λ²A_k‖`.
    Wedge,
}

/// Long-run means of the cocycle and of its exterior-square analogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovCentre {
    pub lambda: f64,
    pub stderr: f64,
    /// `λ + γ`, from increments of `log‖Λ²(g)ξ‖/‖ξ‖`.
    pub wedge: f64,
    pub wedge_stderr: f64,
}

/// Ergodic averages of the two cocycles over `replicates` paths of `n` steps
/// from stationary starts.
pub fn lyapunov_centre(model: &MatrixModel, n: usize, replicates: usize, stream: &InnovationStream) -> Result<LyapunovCentre> {
    if n == 0 || replicates < 2 {
        return Err(Error::invalid("need n >= 1 and at least 2 replicates"));
    }
    let d = model.dim();
    let runs: Vec<(f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let s = stream.child(r);
            let mut w = stationary_sample(model, model.default_burn_in(), &mut s.fork("start"));
            let mut path = s.fork("path");
            let mut xi = DVector::zeros(d * (d - 1) / 2);
            xi[0] = 1.0;
            let (mut top, mut wedge) = (0.0, 0.0);
            for k in 1..=n {
                let g = model.draw(&mut path);
                let (nw, inc) = step_projective(&w, &g);
                w = nw;
                top += inc;
                let y = exterior_square(g.entries()) * &xi;
                let m = y.norm();
                if !(m > 0.0) || !m.is_finite() {
                    return Err(Error::numerical(
                        "deviations",
                        "lyapunov_centre",
                        format!("exterior cocycle degenerated at step {k}"),
                    ));
                }
                wedge += m.ln();
                xi = y / m;
            }
            Ok((top / n as f64, wedge / n as f64))
        })
        .collect::<Result<_>>()?;
    let (lambda, stderr) = stats::mean_stderr(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let (wedge, wedge_stderr) = stats::mean_stderr(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(LyapunovCentre {
        lambda,
        stderr,
        wedge,
        wedge_stderr,
    })
}

/// `|λ̂_centre − λ̂_product| / combined stderr` against an independent
/// product-norm estimate.
pub fn centre_agreement(model: &MatrixModel, centre: &LyapunovCentre, n: usize, replicates: usize, stream: &InnovationStream) -> Result<f64> {
    let est = lyapunov_estimate(model, n, replicates, stream)?;
    let se = (centre.stderr.powi(2) + est.stderr.powi(2)).sqrt();
    let gap = (centre.lambda - est.lambda).abs();
    Ok(if gap == 0.0 { 0.0 } else { gap / se })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceCell {
    pub n: usize,
    pub probe: String,
    pub count: usize,
    pub trials: usize,
    /// `None` when no exceedance was observed; `ci_high` is then the
    /// rule-of-three bound `3/trials`.
    pub prob: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ExceedanceCell {
    pub fn new(n: usize, probe: impl Into<String>, count: usize, trials: usize) -> Self {
        let (ci_low, ci_high, prob) = if count == 0 {
            (0.0, (3.0 / trials as f64).min(1.0), None)
        } else {
            let (lo, hi) = stats::wilson_interval(count, trials);
            (lo, hi, Some(count as f64 / trials as f64))
        };
        ExceedanceCell {
            n,
            probe: probe.into(),
            count,
            trials,
            prob,
            ci_low,
            ci_high,
        }
    }

    /// The point estimate, `0` for an empty cell.
    pub fn point(&self) -> f64 {
        self.prob.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpOptions {
    pub n_grid: Vec<usize>,
    pub epsilon: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub observable: DeviationObservable,
    pub epsilon: f64,
    /// Moment index used for the `n^γ` slope; `1` for bounded laws.
    pub gamma: f64,
    /// The drift per step the running quantity is compared with.
    pub centre: f64,
    pub n_grid: Vec<usize>,
    /// One cell per `(n, probe)`.
    pub cells: Vec<ExceedanceCell>,
    /// The largest cell over probes at each `n`.
    pub per_n: Vec<ExceedanceCell>,
    /// Slope of `log P̂` against `n^γ` over the nonempty cells.
    pub slope: Option<f64>,
    /// Kendall's tau of `(n, P̂)`.
    pub trend: f64,
    pub caveats: Vec<String>,
    /// Norm runs only: steps where `max_i log‖A_k e_i‖ ≤ log‖A_k‖ ≤
    /// max_i log‖A_k e_i‖ + log d` failed.
    pub sandwich_violations: usize,
}

/// Running maxima of `|Y_k − k·centre|`, `k ≤ n`, for one path: one per
/// probe for the cocycle, a single value otherwise, plus the count of
/// norm-sandwich violations.
fn path_max_deviation(
    model: &MatrixModel,
    observable: DeviationObservable,
    probes: &ProbeSet,
    n: usize,
    centre: f64,
    s: &mut InnovationStream,
) -> Result<(Vec<f64>, usize)> {
    let d = model.dim();
    let norm = model.norm_kind();
    match observable {
        DeviationObservable::Cocycle => {
            let p = probes.points.len();
            let mut v = DMatrix::from_fn(d, p, |i, j| probes.points[j].point.rep()[i]);
            let mut logs = vec![0.0; p];
            let mut worst = vec![0.0f64; p];
            for k in 1..=n {
                let g = model.draw(s);
                v = g.entries() * &v;
                for j in 0..p {
                    let mut col = v.column_mut(j);
                    let m = norm.of(&col.clone_owned());
                    if !(m > 0.0) || !m.is_finite() {
                        return Err(Error::numerical("deviations", "ldp_cocycle", format!("probe degenerated at step {k}")));
                    }
                    col /= m;
                    logs[j] += m.ln();
                    worst[j] = worst[j].max((logs[j] - k as f64 * centre).abs());
                }
            }
            Ok((worst, 0))
        }
        DeviationObservable::Norm => {
            let mut prod = RunningProduct::identity(d);
            let mut worst = 0.0f64;
            let mut violations = 0;
            let log_d = (d as f64).ln();
            for k in 1..=n {
                let g = model.draw(s);
                prod.left_mul(g.entries(), k)?;
                let nrm = match norm {
                    NormKind::Euclidean => top_singular_value(&prod.p),
                    NormKind::L1 => l1_operator_norm(&prod.p),
                };
                let basis = prod
                    .p
                    .column_iter()
                    .map(|c| norm.of(&c.clone_owned()))
                    .fold(0.0, f64::max)
                    .ln();
                let y = nrm.ln();
                let tol = 1e-12 * (1.0 + y.abs());
                if y < basis - tol || y > basis + log_d + tol {
                    violations += 1;
                }
                worst = worst.max((prod.log_scale + y - k as f64 * centre).abs());
            }
            Ok((vec![worst], violations))
        }
        DeviationObservable::Wedge => {
            let mut prod = RunningProduct::identity(d * (d - 1) / 2);
            let mut worst = 0.0f64;
            for k in 1..=n {
                let g = model.draw(s);
                prod.left_mul(&exterior_square(g.entries()), k)?;
                let y = prod.log_scale + top_singular_value(&prod.p).ln();
                worst = worst.max((y - k as f64 * centre).abs());
            }
            Ok((vec![worst], 0))
        }
    }
}

/// Empirical `P(max_{k≤n} |Y_k − k·centre| > εn)` for each `n` in the grid.
///
/// Every `n` uses its own block of `replicates` independent products; at a
/// given `n` all probes share the same products.
pub fn ldp(
    model: &MatrixModel,
    observable: DeviationObservable,
    probes: &ProbeSet,
    opts: &LdpOptions,
    centre: f64,
    stream: &InnovationStream,
) -> Result<DeviationReport> {
    if opts.n_grid.is_empty() || opts.n_grid.windows(2).any(|w| w[0] >= w[1]) || opts.n_grid[0] == 0 {
        return Err(Error::invalid("n grid must be positive and strictly increasing"));
    }
    if !(opts.epsilon > 0.0) || opts.replicates == 0 {
        return Err(Error::invalid("need epsilon > 0 and at least one replicate"));
    }
    if observable == DeviationObservable::Cocycle && probes.points.is_empty() {
        return Err(Error::invalid("cocycle deviations need at least one probe"));
    }
    if observable == DeviationObservable::Wedge && model.norm_kind() != NormKind::Euclidean {
        return Err(Error::invalid("exterior-square deviations are defined for invertible laws"));
    }
    let labels: Vec<String> = match observable {
        DeviationObservable::Cocycle => probes.points.iter().map(|p| p.label.clone()).collect(),
        DeviationObservable::Norm => vec!["norm".into()],
        DeviationObservable::Wedge => vec!["wedge".into()],
    };
    let tag = match observable {
        DeviationObservable::Cocycle => "cocycle",
        DeviationObservable::Norm => "norm",
        DeviationObservable::Wedge => "wedge",
    };
    let mut cells = Vec::new();
    let mut per_n = Vec::new();
    let mut sandwich_violations = 0;
    for &n in &opts.n_grid {
        let base = stream.fork(tag).child(n as u64);
        let runs: Vec<(Vec<f64>, usize)> = (0..opts.replicates as u64)
            .into_par_iter()
            .map(|r| path_max_deviation(model, observable, probes, n, centre, &mut base.child(r)))
            .collect::<Result<_>>()?;
        let threshold = opts.epsilon * n as f64;
        let row: Vec<ExceedanceCell> = labels
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let count = runs.iter().filter(|r| r.0[j] > threshold).count();
                ExceedanceCell::new(n, l.clone(), count, opts.replicates)
            })
            .collect();
        sandwich_violations += runs.iter().map(|r| r.1).sum::<usize>();
        let best = row
            .iter()
            .fold(&row[0], |b, c| if c.count > b.count { c } else { b })
            .clone();
        per_n.push(best);
        cells.extend(row);
    }
    let gamma = match model.law().moment_index() {
        g if g.is_finite() => g,
        _ => 1.0,
    };
    let ns: Vec<f64> = per_n.iter().map(|c| c.n as f64).collect();
    let points: Vec<f64> = per_n.iter().map(|c| c.point()).collect();
    let trend = stats::kendall_tau(&ns, &points);
    let (xs, ys): (Vec<f64>, Vec<f64>) = per_n
        .iter()
        .filter_map(|c| c.prob.map(|p| ((c.n as f64).powf(gamma), p.ln())))
        .unzip();
    let slope = stats::fit_line(&xs, &ys).map(|l| l.slope);
    let mut caveats = Vec::new();
    for w in per_n.windows(2) {
        if w[1].ci_high >= w[0].ci_low && w[0].ci_high >= w[1].ci_low {
            caveats.push(format!("confidence intervals at n = {} and n = {} overlap", w[0].n, w[1].n));
        }
    }
    if per_n.iter().any(|c| c.prob.is_none()) {
        caveats.push("some cells had no exceedance; only the rule-of-three bound is reported".into());
    }
    Ok(DeviationReport {
        observable,
        epsilon: opts.epsilon,
        gamma,
        centre,
        n_grid: opts.n_grid.clone(),
        cells,
        per_n,
        slope,
        trend,
        caveats,
        sandwich_violations,
    })
}

/// Running-max deviation of `log‖A_k x‖` from `kλ̂`, maximized over probes.
pub fn ldp_cocycle(
    model: &MatrixModel,
    probes: &ProbeSet,
    opts: &LdpOptions,
    centre: &LyapunovCentre,
    stream: &InnovationStream,
) -> Result<DeviationReport> {
    ldp(model, DeviationObservable::Cocycle, probes, opts, centre.lambda, stream)
}

pub fn ldp_norm(model: &MatrixModel, opts: &LdpOptions, centre: &LyapunovCentre, stream: &InnovationStream) -> Result<DeviationReport> {
    let none = ProbeSet {
        points: Vec::new(),
        pairs: Vec::new(),
    };
    ldp(model, DeviationObservable::Norm, &none, opts, centre.lambda, stream)
}

pub fn ldp_wedge(model: &MatrixModel, opts: &LdpOptions, centre: &LyapunovCentre, stream: &InnovationStream) -> Result<DeviationReport> {
    let none = ProbeSet {
        points: Vec::new(),
        pairs: Vec::new(),
    };
    ldp(model, DeviationObservable::Wedge, &none, opts, centre.wedge, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MatrixLaw;
    use crate::numlin::GroupElement;

    fn diag_model(v: &[f64]) -> MatrixModel {
        MatrixModel::new(MatrixLaw::single(GroupElement::diagonal(v).unwrap()))
    }

    fn opts() -> LdpOptions {
        LdpOptions {
            n_grid: vec![10, 20, 40],
            epsilon: 0.05,
            replicates: 50,
        }
    }

    #[test]
    fn deterministic_diagonal_law() {
        let model = diag_model(&[2.0, 0.5]);
        let s = InnovationStream::new(1);
        let c = lyapunov_centre(&model, 200, 4, &s).unwrap();
        assert!((c.lambda - 2f64.ln()).abs() < 1e-6);
        assert!(c.wedge.abs() < 1e-12);
        let probes = ProbeSet::basis(2, NormKind::Euclidean);
        let probes = ProbeSet {
            points: probes.points[..1].to_vec(),
            pairs: Vec::new(),
        };
        let exact = LyapunovCentre {
            lambda: 2f64.ln(),
            stderr: 0.0,
            wedge: 0.0,
            wedge_stderr: 0.0,
        };
        for r in [
            ldp_cocycle(&model, &probes, &opts(), &exact, &s).unwrap(),
            ldp_norm(&model, &opts(), &exact, &s).unwrap(),
            ldp_wedge(&model, &opts(), &exact, &s).unwrap(),
        ] {
            assert!(r.cells.iter().all(|c| c.count == 0 && c.prob.is_none()));
            assert!(r.per_n.iter().all(|c| c.ci_high == 3.0 / 50.0));
            assert_eq!(r.sandwich_violations, 0);
        }
    }

    #[test]
    fn diag_421_wedge_centre() {
        let model = diag_model(&[4.0, 2.0, 1.0]);
        let c = lyapunov_centre(&model, 100, 2, &InnovationStream::new(2)).unwrap();
        assert!((c.wedge - 8f64.ln()).abs() < 1e-6);
        assert!((c.lambda - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_law_never_deviates() {
        let model = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 0.0).unwrap());
        let s = InnovationStream::new(3);
        let c = lyapunov_centre(&model, 100, 4, &s).unwrap();
        assert!(c.lambda.abs() < 1e-12);
        let probes = ProbeSet::default_for(3, NormKind::Euclidean, &s).unwrap();
        let r = ldp_cocycle(&model, &probes, &opts(), &c, &s).unwrap();
        assert!(r.cells.iter().all(|c| c.count == 0));
        assert_eq!(r.cells.len(), 3 * 19);
    }

    #[test]
    fn norm_sandwich_holds_on_random_law() {
        let model = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 1.0).unwrap());
        let s = InnovationStream::new(4);
        let c = lyapunov_centre(&model, 400, 20, &s).unwrap();
        let r = ldp_norm(&model, &opts(), &c, &s).unwrap();
        assert_eq!(r.sandwich_violations, 0);
        let pos = MatrixModel::new(MatrixLaw::positive_random(3, 1.0, 0.5, 0.2).unwrap());
        let cp = lyapunov_centre(&pos, 400, 20, &s).unwrap();
        assert_eq!(ldp_norm(&pos, &opts(), &cp, &s).unwrap().sandwich_violations, 0);
    }

    #[test]
    fn centre_agrees_with_product_estimate() {
        let model = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 1.0).unwrap());
        let s = InnovationStream::new(5);
        let c = lyapunov_centre(&model, 2000, 40, &s.fork("a")).unwrap();
        assert!(centre_agreement(&model, &c, 2000, 40, &s.fork("b")).unwrap() < 3.0);
        // s₂ ≤ s₁ and det = 1
        assert!(c.wedge <= 2.0 * c.lambda + 3.0 * (c.stderr + c.wedge_stderr));
        assert!(c.wedge >= -3.0 * c.wedge_stderr);
    }

    #[test]
    fn empty_cells_use_rule_of_three() {
        let e = ExceedanceCell::new(10, "x", 0, 1000);
        assert_eq!((e.ci_low, e.ci_high, e.prob), (0.0, 0.003, None));
        let f = ExceedanceCell::new(10, "x", 10, 1000);
        assert!(f.ci_low < 0.01 && f.ci_high > 0.01 && f.prob == Some(0.01));
    }
}
