//! Random matrix products acting on directions.
//!
//! The chain is `W_n = ε_n · W_{n−1}` on the projective space (or on the
//! positive part of the ℓ¹ sphere) and the observable is the cocycle
//! `X_n = log(‖ε_n w‖/‖w‖)`, so `S_n = log‖A_n x‖` with `A_n = ε_n ⋯ ε_1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use rayon::prelude::*;

use super::{InnovationStream, MarkovModel, Trajectory};
use crate::error::{Error, Result};
use crate::numlin::{
    exterior_square, l1_operator_norm, matrix_spectral_radius, matrix_v_min, size_n,
    top_singular_value, GroupElement, MatrixKind, NormKind, ProjectivePoint,
};
use crate::stats;

/// A law on `d × d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixLaw {
    FiniteSupport {
        support: Vec<GroupElement>,
        cumulative: Vec<f64>,
    },
    /// `Q·diag(e^Y, 1, …, 1, e^{−Y})·Q′` with independent Haar orthogonal
    /// `Q`, `Q′` and `Y = scale·W`, `W` Weibull of shape `shape`, so
    /// `P(log N(g) > t) = exp(−(t/scale)^shape)`. `scale = 0` gives the
    /// orthogonal-only law.
    RotationDiagonal { d: usize, shape: f64, scale: f64 },
    /// Entries `exp(±Y_ij)` with `Y_ij = scale·W_ij`; each off-diagonal entry
    /// is zeroed with probability `zero_prob`. The diagonal stays positive and
    /// the all-positive matrices carry positive mass whenever
    /// `zero_prob < 1`.
    PositiveRandom {
        d: usize,
        shape: f64,
        scale: f64,
        zero_prob: f64,
    },
}

impl MatrixLaw {
    pub fn finite_support(atoms: Vec<(GroupElement, f64)>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::invalid("finite support needs at least one atom"))?;
        let (d, kind) = (first.0.dim(), first.0.kind());
        if atoms.iter().any(|(g, _)| g.dim() != d || g.kind() != kind) {
            return Err(Error::invalid("support matrices must share dimension and kind"));
        }
        if atoms.iter().any(|(_, p)| !(*p >= 0.0)) {
            return Err(Error::invalid("probabilities must be nonnegative"));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Ok(MatrixLaw::FiniteSupport {
            support: atoms.into_iter().map(|(g, _)| g).collect(),
            cumulative,
        })
    }

    /// The law concentrated on one matrix.
    pub fn single(g: GroupElement) -> Self {
        MatrixLaw::FiniteSupport {
            support: vec![g],
            cumulative: vec![1.0],
        }
    }

    pub fn rotation_diagonal(d: usize, shape: f64, scale: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid("dimension must be at least 2"));
        }
        if !(shape > 0.0) || !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::invalid("need shape > 0 and finite scale >= 0"));
        }
        Ok(MatrixLaw::RotationDiagonal { d, shape, scale })
    }

    pub fn positive_random(d: usize, shape: f64, scale: f64, zero_prob: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid("dimension must be at least 2"));
        }
        if !(shape > 0.0) || !(scale >= 0.0) || !scale.is_finite() || !(0.0..1.0).contains(&zero_prob) {
            return Err(Error::invalid("need shape > 0, finite scale >= 0 and zero_prob in [0, 1)"));
        }
        Ok(MatrixLaw::PositiveRandom {
            d,
            shape,
            scale,
            zero_prob,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixLaw::FiniteSupport { support, .. } => support[0].dim(),
            MatrixLaw::RotationDiagonal { d, .. } | MatrixLaw::PositiveRandom { d, .. } => *d,
        }
    }

    pub fn kind(&self) -> MatrixKind {
        match self {
            MatrixLaw::FiniteSupport { support, .. } => support[0].kind(),
            MatrixLaw::RotationDiagonal { .. } => MatrixKind::Invertible,
            MatrixLaw::PositiveRandom { .. } => MatrixKind::PositiveAllowable,
        }
    }

    pub fn norm_kind(&self) -> NormKind {
        self.kind().norm()
    }

    /// Index `γ` of the sub-exponential moment of `log N(g)`; infinite for
    /// bounded support.
    pub fn moment_index(&self) -> f64 {
        match self {
            MatrixLaw::FiniteSupport { .. } => f64::INFINITY,
            MatrixLaw::RotationDiagonal { shape, scale, .. } | MatrixLaw::PositiveRandom { shape, scale, .. } => {
                if *scale == 0.0 {
                    f64::INFINITY
                } else {
                    *shape
                }
            }
        }
    }

    /// A constant `c` with `E exp(c (log N)^γ) < ∞`.
    pub fn moment_constant(&self) -> f64 {
        match self {
            MatrixLaw::FiniteSupport { .. } => f64::INFINITY,
            MatrixLaw::RotationDiagonal { shape, scale, .. } => 0.5 / scale.powf(*shape),
            // log N ≤ max |Y_ij| + log d, a maximum of d² Weibull variables
            MatrixLaw::PositiveRandom { shape, scale, .. } => 0.25 / scale.powf(*shape),
        }
    }

    /// Warnings from the unbounded-image heuristic. Strong irreducibility and
    /// proximality are not certified.
    pub fn irreducibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            MatrixLaw::FiniteSupport { support, .. } => {
                out.push("finite support: image of the law is bounded, positive asymptotic variance is not implied".into());
                let d = support[0].dim();
                let diagonal = support
                    .iter()
                    .all(|g| (0..d).all(|i| (0..d).all(|j| i == j || g.entries()[(i, j)] == 0.0)));
                if diagonal {
                    out.push("all support matrices are diagonal: the law is not strongly irreducible".into());
                }
            }
            MatrixLaw::RotationDiagonal { scale, .. } if *scale == 0.0 => {
                out.push("orthogonal-only law: not proximal, the cocycle is identically zero".into())
            }
            MatrixLaw::PositiveRandom { scale, .. } if *scale == 0.0 => {
                out.push("degenerate positive law: entries are constant".into())
            }
            _ => {}
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        match self {
            MatrixLaw::FiniteSupport { support, cumulative } => {
                let u: f64 = rng.random();
                let i = cumulative.partition_point(|&c| c <= u).min(support.len() - 1);
                support[i].clone()
            }
            MatrixLaw::RotationDiagonal { d, shape, scale } => {
                let d = *d;
                let q1 = haar_orthogonal(rng, d);
                let q2 = haar_orthogonal(rng, d);
                let y = if *scale == 0.0 {
                    0.0
                } else {
                    Weibull::new(*scale, *shape).unwrap().sample(rng)
                };
                let mut diag = vec![1.0; d];
                diag[0] = y.exp();
                diag[d - 1] = (-y).exp();
                let m = &q1 * DMatrix::from_diagonal(&DVector::from_column_slice(&diag)) * &q2;
                GroupElement::trusted(m, MatrixKind::Invertible, Some(diag))
            }
            MatrixLaw::PositiveRandom {
                d,
                shape,
                scale,
                zero_prob,
            } => {
                let weibull = (*scale > 0.0).then(|| Weibull::new(*scale, *shape).unwrap());
                let mut m = DMatrix::zeros(*d, *d);
                for j in 0..*d {
                    for i in 0..*d {
                        if i != j && *zero_prob > 0.0 && rng.random::<f64>() < *zero_prob {
                            continue;
                        }
                        let y = weibull.as_ref().map_or(0.0, |w| w.sample(rng));
                        m[(i, j)] = if rng.random::<bool>() { y.exp() } else { (-y).exp() };
                    }
                }
                GroupElement::trusted(m, MatrixKind::PositiveAllowable, None)
            }
        }
    }
}

/// Haar-distributed element of `O(d)`: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal moved into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let z: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// One step of the projective chain: `(g·w̄, log(‖g w‖/‖w‖))`.
pub fn step_projective(w: &ProjectivePoint, g: &GroupElement) -> (ProjectivePoint, f64) {
    let norm = w.norm_kind();
    let y = g.entries() * w.rep();
    let n = norm.of(&y);
    (ProjectivePoint::canonical(y / n, norm), n.ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixModel {
    law: MatrixLaw,
    start: ProjectivePoint,
    burn_in: usize,
}

impl MatrixModel {
    /// Starts from `e₁` (Euclidean) or the barycentre of the simplex (ℓ¹).
    pub fn new(law: MatrixLaw) -> Self {
        let d = law.dim();
        let start = match law.norm_kind() {
            NormKind::Euclidean => ProjectivePoint::basis(d, 0, NormKind::Euclidean),
            NormKind::L1 => ProjectivePoint::canonical(DVector::from_element(d, 1.0 / d as f64), NormKind::L1),
        };
        MatrixModel {
            law,
            start,
            burn_in: 64,
        }
    }

    pub fn with_start(mut self, start: ProjectivePoint) -> Result<Self> {
        if start.dim() != self.law.dim() || start.norm_kind() != self.law.norm_kind() {
            return Err(Error::invalid("start direction does not match the law"));
        }
        self.start = start;
        Ok(self)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn law(&self) -> &MatrixLaw {
        &self.law
    }

    pub fn dim(&self) -> usize {
        self.law.dim()
    }

    pub fn norm_kind(&self) -> NormKind {
        self.law.norm_kind()
    }
}

impl MarkovModel for MatrixModel {
    type State = ProjectivePoint;
    type Innovation = GroupElement;

    fn reference_start(&self) -> ProjectivePoint {
        self.start.clone()
    }

    fn draw(&self, s: &mut InnovationStream) -> GroupElement {
        self.law.sample(s)
    }

    fn step(&self, w: &ProjectivePoint, e: &GroupElement) -> (ProjectivePoint, f64) {
        step_projective(w, e)
    }

    fn default_burn_in(&self) -> usize {
        self.burn_in
    }

    /// `|log‖g x‖| ≤ log N(g)`.
    fn observable_bound(&self) -> Option<f64> {
        match &self.law {
            MatrixLaw::FiniteSupport { support, .. } => support
                .iter()
                .map(|g| size_n(g).map(f64::ln))
                .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
                .ok(),
            MatrixLaw::RotationDiagonal { scale, .. } if *scale == 0.0 => Some(0.0),
            _ => None,
        }
    }
}

/// Which running-product quantities to record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixObservables {
    pub norm: bool,
    pub v: bool,
    pub rho: bool,
    pub wedge: bool,
    /// `max_i log‖A_k e_i‖`.
    pub basis: bool,
    /// `(x, y)` for `log|⟨A_k x, y⟩|`.
    pub coeff: Option<(DVector<f64>, DVector<f64>)>,
    /// Steps to record at, ascending; `None` records every step.
    pub checkpoints: Option<Vec<usize>>,
}

impl MatrixObservables {
    pub fn every_step() -> Self {
        MatrixObservables {
            norm: true,
            ..Default::default()
        }
    }
}

/// Running-product quantities at the recorded steps. Unrequested series are
/// empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixAux {
    pub steps: Vec<usize>,
    pub log_norm: Vec<f64>,
    pub log_v: Vec<f64>,
    pub log_rho: Vec<f64>,
    pub log_wedge: Vec<f64>,
    pub log_basis_max: Vec<f64>,
    pub log_coeff: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MatrixTrajectory {
    pub path: Trajectory,
    pub aux: MatrixAux,
    pub end: ProjectivePoint,
}

/// A product `scale·P` kept with `P` normalized after every step.
#[derive(Debug, Clone)]
pub(crate) struct RunningProduct {
    pub p: DMatrix<f64>,
    pub log_scale: f64,
}

impl RunningProduct {
    pub fn identity(d: usize) -> Self {
        RunningProduct {
            p: DMatrix::identity(d, d),
            log_scale: 0.0,
        }
    }

    /// `P ← g·P`, renormalized by the largest absolute entry.
    pub fn left_mul(&mut self, g: &DMatrix<f64>, step: usize) -> Result<()> {
        self.p = g * &self.p;
        let m = self.p.amax();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::numerical(
                "models",
                "simulate_trajectory",
                format!("running product degenerated at step {step}"),
            ));
        }
        self.p /= m;
        self.log_scale += m.ln();
        Ok(())
    }
}

pub fn simulate_matrix_trajectory(
    model: &MatrixModel,
    start: ProjectivePoint,
    n: usize,
    s: &mut InnovationStream,
    obs: &MatrixObservables,
) -> Result<MatrixTrajectory> {
    let d = model.dim();
    let kind = model.norm_kind();
    if obs.v && kind != NormKind::L1 {
        return Err(Error::invalid("v(A_n) is defined for positive matrix laws only"));
    }
    let mut prod = RunningProduct::identity(d);
    let mut wedge = obs.wedge.then(|| RunningProduct::identity(d * (d - 1) / 2));
    let mut w = start;
    let mut x = Vec::with_capacity(n);
    let mut aux = MatrixAux::default();
    let mut next_cp = 0usize;
    for k in 1..=n {
        let g = model.draw(s);
        let (nw, inc) = step_projective(&w, &g);
        x.push(inc);
        w = nw;
        prod.left_mul(g.entries(), k)?;
        if let Some(wp) = wedge.as_mut() {
            wp.left_mul(&exterior_square(g.entries()), k)?;
        }
        let record = match &obs.checkpoints {
            None => true,
            Some(cps) => {
                if next_cp < cps.len() && cps[next_cp] == k {
                    next_cp += 1;
                    true
                } else {
                    false
                }
            }
        };
        if !record {
            continue;
        }
        aux.steps.push(k);
        let p = &prod.p;
        let ls = prod.log_scale;
        if obs.norm {
            let nrm = match kind {
                NormKind::Euclidean => top_singular_value(p),
                NormKind::L1 => l1_operator_norm(p),
            };
            aux.log_norm.push(ls + nrm.ln());
        }
        if obs.v {
            aux.log_v.push(ls + matrix_v_min(p).ln());
        }
        if obs.rho {
            aux.log_rho.push(ls + matrix_spectral_radius(p)?.ln());
        }
        if let Some(wp) = &wedge {
            aux.log_wedge.push(wp.log_scale + top_singular_value(&wp.p).ln());
        }
        if obs.basis {
            let best = p
                .column_iter()
                .map(|c| kind.of(&c.into_owned()))
                .fold(0.0, f64::max);
            aux.log_basis_max.push(ls + best.ln());
        }
        if let Some((cx, cy)) = &obs.coeff {
            aux.log_coeff.push(ls + cy.dot(&(p * cx)).abs().ln());
        }
    }
    Ok(MatrixTrajectory {
        path: Trajectory::from_increments(x),
        aux,
        end: w,
    })
}

/// Monte Carlo estimate of a top exponent `lim n⁻¹ log‖A_n‖` (or
/// `lim n⁻¹ log‖Λ²A_n‖` when `wedge` is set) from `replicates` products of
/// length `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovEstimate {
    pub lambda: f64,
    pub stderr: f64,
    pub lambda_wedge: f64,
    pub stderr_wedge: f64,
}

pub fn lyapunov_estimate(
    model: &MatrixModel,
    n: usize,
    replicates: usize,
    stream: &InnovationStream,
) -> Result<LyapunovEstimate> {
    if n == 0 || replicates == 0 {
        return Err(Error::invalid("need n >= 1 and at least one replicate"));
    }
    let d = model.dim();
    let runs: Vec<(f64, f64)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let mut s = stream.child(r);
            let mut prod = RunningProduct::identity(d);
            let mut wedge = RunningProduct::identity(d * (d - 1) / 2);
            for k in 1..=n {
                let g = model.draw(&mut s);
                prod.left_mul(g.entries(), k)?;
                wedge.left_mul(&exterior_square(g.entries()), k)?;
            }
            let nrm = match model.norm_kind() {
                NormKind::Euclidean => top_singular_value(&prod.p),
                NormKind::L1 => l1_operator_norm(&prod.p),
            };
            let top = (prod.log_scale + nrm.ln()) / n as f64;
            let w = (wedge.log_scale + top_singular_value(&wedge.p).ln()) / n as f64;
            Ok((top, w))
        })
        .collect::<Result<_>>()?;
    let tops: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let wedges: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (lambda, stderr) = stats::mean_stderr(&tops);
    let (lambda_wedge, stderr_wedge) = stats::mean_stderr(&wedges);
    Ok(LyapunovEstimate {
        lambda,
        stderr,
        lambda_wedge,
        stderr_wedge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::stationary_sample;
    use crate::numlin::{op_norm, v_min};
    use num::bigint::BigInt;
    use num::{BigRational, ToPrimitive};

    fn diag(v: &[f64]) -> GroupElement {
        GroupElement::diagonal(v).unwrap()
    }

    fn e1(d: usize) -> ProjectivePoint {
        ProjectivePoint::basis(d, 0, NormKind::Euclidean)
    }

    #[test]
    fn finite_support_validation() {
        assert!(MatrixLaw::finite_support(vec![(diag(&[2.0, 0.5]), 0.5), (diag(&[0.5, 2.0]), 0.4)]).is_err());
        assert!(MatrixLaw::finite_support(vec![]).is_err());
        let pos = GroupElement::positive_allowable(DMatrix::identity(2, 2)).unwrap();
        assert!(MatrixLaw::finite_support(vec![(diag(&[1.0, 1.0]), 0.5), (pos, 0.5)]).is_err());
    }

    #[test]
    fn identity_law_always_identity() {
        let law = MatrixLaw::single(GroupElement::identity(3));
        let mut s = InnovationStream::new(1);
        for _ in 0..100 {
            assert_eq!(law.sample(&mut s), GroupElement::identity(3));
        }
    }

    #[test]
    fn finite_support_frequencies() {
        let law = MatrixLaw::finite_support(vec![(diag(&[2.0, 0.5]), 0.5), (diag(&[0.5, 2.0]), 0.5)]).unwrap();
        let mut s = InnovationStream::new(2);
        let first = (0..10_000)
            .filter(|_| law.sample(&mut s).entries()[(0, 0)] == 2.0)
            .count();
        let f = first as f64 / 10_000.0;
        assert!((f - 0.5).abs() < 0.01, "frequency {f}");
    }

    #[test]
    fn rotation_diagonal_singular_values_and_tail() {
        let law = MatrixLaw::rotation_diagonal(3, 1.0, 0.7).unwrap();
        let mut s = InnovationStream::new(3);
        let mut logn = Vec::new();
        for _ in 0..20_000 {
            let g = law.sample(&mut s);
            let direct = crate::numlin::sorted_singular_values(g.entries());
            for (a, b) in direct.iter().zip(g.singular_values()) {
                assert!((a - b).abs() < 1e-9 * a.max(1.0));
            }
            logn.push(size_n(&g).unwrap().ln());
        }
        // P(log N > t) = exp(-t/0.7) exactly, so exp(1 - t/b) bounds it for
        // any fitted b at least 0.7 / (1 + noise)
        let n = logn.len() as f64;
        for t in [0.5, 1.0, 2.0, 3.0] {
            let p = logn.iter().filter(|&&v| v > t).count() as f64 / n;
            assert!(p <= (1.0 - t / 0.7).exp() + 3.0 * (p / n).sqrt() + 1e-4);
            assert!((p - (-t / 0.7f64).exp()).abs() < 4.0 * ((-t / 0.7f64).exp() / n).sqrt() + 1e-4);
        }
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut s = InnovationStream::new(4);
        for d in 2..=5 {
            let q = haar_orthogonal(&mut s, d);
            let e = (q.transpose() * &q - DMatrix::identity(d, d)).amax();
            assert!(e < 1e-12);
        }
    }

    #[test]
    fn step_examples() {
        let (w, x) = step_projective(&e1(2), &GroupElement::identity(2));
        assert_eq!((w, x), (e1(2), 0.0));
        let (w, x) = step_projective(&e1(2), &diag(&[2.0, 0.5]));
        assert_eq!(w, e1(2));
        assert!((x - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_step_chain_matches_direct_product() {
        let law = MatrixLaw::rotation_diagonal(3, 1.0, 1.0).unwrap();
        let mut s = InnovationStream::new(5);
        let (g1, g2) = (law.sample(&mut s), law.sample(&mut s));
        let start = ProjectivePoint::from_slice(&[0.3, -0.5, 0.8], NormKind::Euclidean).unwrap();
        let (w1, x1) = step_projective(&start, &g1);
        let (w2, x2) = step_projective(&w1, &g2);
        let direct = g2.entries() * g1.entries() * start.rep();
        assert!((x1 + x2 - direct.norm().ln()).abs() < 1e-12);
        let dir = ProjectivePoint::new(direct, NormKind::Euclidean).unwrap();
        assert!((w2.rep() - dir.rep()).amax() < 1e-12);
    }

    #[test]
    fn deterministic_laws() {
        let model = MatrixModel::new(MatrixLaw::single(diag(&[2.0, 0.5])));
        let mut s = InnovationStream::new(6);
        let t = simulate_matrix_trajectory(&model, e1(2), 10, &mut s, &MatrixObservables::every_step()).unwrap();
        for k in 0..10 {
            assert_eq!(t.path.s[k], (k + 1) as f64 * 2f64.ln());
        }
        let rot = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 0.0).unwrap());
        let start = ProjectivePoint::from_slice(&[1.0, 2.0, -1.0], NormKind::Euclidean).unwrap();
        let t = simulate_matrix_trajectory(&rot, start, 200, &mut s, &MatrixObservables::every_step()).unwrap();
        assert!(t.path.s.iter().all(|v| v.abs() < 1e-12));
        assert!(t.aux.log_norm.iter().all(|v| v.abs() < 1e-12));
        let frozen = MatrixModel::new(MatrixLaw::single(GroupElement::identity(2)));
        assert_eq!(stationary_sample(&frozen, 50, &mut s), frozen.reference_start());
        for k in 1..=7u32 {
            let n = (k * 3) as f64;
            let m = diag(&[2.0, 0.5]);
            assert!((n * op_norm(&m).ln() / n - 2f64.ln()).abs() < 1e-15);
        }
    }

    fn big_product(mats: &[DMatrix<f64>]) -> Vec<Vec<BigRational>> {
        let d = mats[0].nrows();
        let zero = || BigRational::from_integer(BigInt::from(0));
        let mut p: Vec<Vec<BigRational>> = (0..d)
            .map(|i| (0..d).map(|j| BigRational::from_integer(BigInt::from((i == j) as i32))).collect())
            .collect();
        for m in mats {
            let g: Vec<Vec<BigRational>> = (0..d)
                .map(|i| (0..d).map(|j| BigRational::from_float(m[(i, j)]).unwrap()).collect())
                .collect();
            p = (0..d)
                .map(|i| (0..d).map(|j| (0..d).fold(zero(), |acc, k| acc + &g[i][k] * &p[k][j])).collect())
                .collect();
        }
        p
    }

    #[test]
    fn checkpointed_norm_matches_exact_product() {
        let model = MatrixModel::new(MatrixLaw::rotation_diagonal(3, 1.0, 0.8).unwrap());
        let s = InnovationStream::new(7);
        let obs = MatrixObservables {
            norm: true,
            checkpoints: Some(vec![50]),
            ..Default::default()
        };
        let t = simulate_matrix_trajectory(&model, e1(3), 50, &mut s.clone(), &obs).unwrap();
        let mut s2 = s.clone();
        let mats: Vec<DMatrix<f64>> = (0..50).map(|_| model.draw(&mut s2).entries().clone()).collect();
        let exact = big_product(&mats);
        // scale the exact product down by a power of two before rounding
        let max_bits = exact
            .iter()
            .flatten()
            .map(|e| e.numer().bits() as i64 - e.denom().bits() as i64)
            .max()
            .unwrap();
        let scale = BigRational::from_integer(BigInt::from(2)).pow(-(max_bits as i32));
        let m = DMatrix::from_fn(3, 3, |i, j| (&exact[i][j] * &scale).to_f64().unwrap());
        let log_norm = top_singular_value(&m).ln() + max_bits as f64 * 2f64.ln();
        assert_eq!(t.aux.steps, vec![50]);
        assert!((t.aux.log_norm[0] - log_norm).abs() < 1e-7);
        // and the cocycle sum equals log ‖A_50 e_1‖
        let col = DVector::from_fn(3, |i, _| m[(i, 0)]);
        assert!((t.path.s[49] - (col.norm().ln() + max_bits as f64 * 2f64.ln())).abs() < 1e-9 * 50.0);
    }

    #[test]
    fn positive_products_respect_norm_sandwich() {
        let model = MatrixModel::new(MatrixLaw::positive_random(3, 1.0, 0.5, 0.2).unwrap());
        let mut s = InnovationStream::new(8);
        for _ in 0..5 {
            let g = model.draw(&mut s);
            let v = v_min(&g).unwrap();
            let r = crate::numlin::spectral_radius(&g).unwrap();
            assert!(v <= r + 1e-12 && r <= op_norm(&g) + 1e-12);
        }
        let obs = MatrixObservables {
            norm: true,
            v: true,
            rho: true,
            ..Default::default()
        };
        let start = model.reference_start();
        let t = simulate_matrix_trajectory(&model, start, 300, &mut s, &obs).unwrap();
        for k in 0..300 {
            let (lv, lr, ln) = (t.aux.log_v[k], t.aux.log_rho[k], t.aux.log_norm[k]);
            let sx = t.path.s[k];
            assert!(lv <= sx + 1e-9 && sx <= ln + 1e-9, "step {k}");
            assert!(lv <= lr + 1e-9 && lr <= ln + 1e-9, "step {k}");
        }
    }

    #[test]
    fn lyapunov_of_deterministic_laws() {
        let s = InnovationStream::new(9);
        let m = MatrixModel::new(MatrixLaw::single(diag(&[2.0, 0.5])));
        let est = lyapunov_estimate(&m, 1000, 4, &s).unwrap();
        assert!((est.lambda - 2f64.ln()).abs() < 1e-12);
        assert!(est.lambda_wedge.abs() < 1e-12);
        let m3 = MatrixModel::new(MatrixLaw::single(diag(&[4.0, 2.0, 1.0])));
        let est = lyapunov_estimate(&m3, 1000, 2, &s).unwrap();
        assert!((est.lambda_wedge - 8f64.ln()).abs() < 1e-12);
    }
}
