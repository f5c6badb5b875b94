use nalgebra::DVector;

use super::{GroupElement, NormKind};
use crate::error::{Error, Result};

/// A direction in `ℝ^d` with a canonical representative.
///
/// Euclidean points are unit vectors whose first nonzero coordinate is
/// positive, so equality of points is equality of representatives. ℓ¹ points
/// are nonnegative with unit coordinate sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectivePoint {
    rep: DVector<f64>,
    norm: NormKind,
}

impl ProjectivePoint {
    pub fn new(v: DVector<f64>, norm: NormKind) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::invalid("dimension must be at least 2"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("direction has non-finite coordinates"));
        }
        if norm == NormKind::L1 && v.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("positive-cone direction has a negative coordinate"));
        }
        let n = norm.of(&v);
        if !(n > 0.0) {
            return Err(Error::invalid("zero vector has no direction"));
        }
        Ok(Self::canonical(v / n, norm))
    }

    pub fn from_slice(v: &[f64], norm: NormKind) -> Result<Self> {
        Self::new(DVector::from_column_slice(v), norm)
    }

    /// The `i`-th basis direction.
    pub fn basis(d: usize, i: usize, norm: NormKind) -> Self {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        ProjectivePoint { rep: v, norm }
    }

    /// `v` must already have unit norm under `norm`.
    pub(crate) fn canonical(mut v: DVector<f64>, norm: NormKind) -> Self {
        if norm == NormKind::Euclidean {
            if let Some(first) = v.iter().copied().find(|&x| x != 0.0) {
                if first < 0.0 {
                    v.neg_mut();
                }
            }
        }
        ProjectivePoint { rep: v, norm }
    }

    pub fn rep(&self) -> &DVector<f64> {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.len()
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }
}

fn unit_euclidean(x: &DVector<f64>) -> DVector<f64> {
    x / x.norm()
}

/// `d(x̄, ȳ) = ‖x ∧ y‖ / (‖x‖‖y‖)`.
///
/// Equals `sqrt(1 − ⟨u,v⟩²)` for the Euclidean-normalized representatives
/// `u`, `v`; evaluated as `‖u − v‖·‖u + v‖ / 2`, which is symmetric and keeps
/// small distances accurate.
pub fn proj_distance(x: &ProjectivePoint, y: &ProjectivePoint) -> f64 {
    let (u, v) = (unit_euclidean(&x.rep), unit_euclidean(&y.rep));
    ((&u - &v).norm() * (&u + &v).norm() / 2.0).min(1.0)
}

/// `δ(x̄, ȳ) = |⟨x,y⟩| / (‖x‖‖y‖)`.
pub fn angle_delta(x: &ProjectivePoint, y: &ProjectivePoint) -> f64 {
    let (u, v) = (unit_euclidean(&x.rep), unit_euclidean(&y.rep));
    u.dot(&v).abs().min(1.0)
}

/// A vector stored as a direction and the natural log of its norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScaledVector {
    pub direction: ProjectivePoint,
    pub log_norm: f64,
}

impl LogScaledVector {
    pub fn new(direction: ProjectivePoint) -> Self {
        LogScaledVector {
            direction,
            log_norm: 0.0,
        }
    }
}

/// Applies `g` and renormalizes under the direction's own norm.
pub fn apply_renorm(v: &LogScaledVector, g: &GroupElement) -> Result<LogScaledVector> {
    if g.dim() != v.direction.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    let norm = v.direction.norm;
    let y = g.entries() * &v.direction.rep;
    let n = norm.of(&y);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Singular(format!("image norm {n:e}")));
    }
    Ok(LogScaledVector {
        direction: ProjectivePoint::canonical(y / n, norm),
        log_norm: v.log_norm + n.ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use num::bigint::BigInt;
    use num::{BigRational, ToPrimitive};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> ProjectivePoint {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        ProjectivePoint::new(v, NormKind::Euclidean).unwrap()
    }

    fn wedge_oracle(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let d = x.len();
        let mut s = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                let m = x[i] * y[j] - x[j] * y[i];
                s += m * m;
            }
        }
        s.sqrt() / (x.norm() * y.norm())
    }

    #[test]
    fn sign_quotient() {
        let a = ProjectivePoint::from_slice(&[1.0, -2.0], NormKind::Euclidean).unwrap();
        let b = ProjectivePoint::from_slice(&[-1.0, 2.0], NormKind::Euclidean).unwrap();
        assert_eq!(a, b);
        assert!((a.rep().norm() - 1.0).abs() < 1e-12);
        let p = ProjectivePoint::from_slice(&[1.0, 3.0], NormKind::L1).unwrap();
        assert!((p.rep().sum() - 1.0).abs() < 1e-12);
        assert!(ProjectivePoint::from_slice(&[1.0, -3.0], NormKind::L1).is_err());
        assert!(ProjectivePoint::from_slice(&[0.0, 0.0], NormKind::Euclidean).is_err());
    }

    #[test]
    fn distance_trivial_cases() {
        let e1 = ProjectivePoint::basis(3, 0, NormKind::Euclidean);
        let e2 = ProjectivePoint::basis(3, 1, NormKind::Euclidean);
        assert_eq!(proj_distance(&e1, &e1), 0.0);
        assert_eq!(proj_distance(&e1, &e2), 1.0);
        assert_eq!(angle_delta(&e1, &e1), 1.0);
        assert_eq!(angle_delta(&e1, &e2), 0.0);
    }

    #[test]
    fn distance_matches_minor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let x = random_point(&mut rng, 5);
            let y = random_point(&mut rng, 5);
            let oracle = wedge_oracle(x.rep(), y.rep());
            assert!((proj_distance(&x, &y) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_matches_arccos() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let x = random_point(&mut rng, 4);
            let y = random_point(&mut rng, 4);
            let theta = x.rep().dot(y.rep()).clamp(-1.0, 1.0).acos();
            assert!((angle_delta(&x, &y) - theta.cos().abs()).abs() < 1e-12);
            let d = proj_distance(&x, &y);
            let a = angle_delta(&x, &y);
            assert!((a * a + d * d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn small_distances_stay_accurate() {
        let x = ProjectivePoint::from_slice(&[1.0, 0.0, 0.0], NormKind::Euclidean).unwrap();
        let y = ProjectivePoint::from_slice(&[1.0, 1e-10, 0.0], NormKind::Euclidean).unwrap();
        assert!((proj_distance(&x, &y) - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn metric_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for d in [3, 5] {
            for _ in 0..10_000 {
                let x = random_point(&mut rng, d);
                let y = random_point(&mut rng, d);
                let z = random_point(&mut rng, d);
                assert_eq!(proj_distance(&x, &y), proj_distance(&y, &x));
                assert_eq!(proj_distance(&x, &x), 0.0);
                assert!(proj_distance(&x, &z) <= proj_distance(&x, &y) + proj_distance(&y, &z) + 1e-12);
            }
        }
    }

    #[test]
    fn renorm_trivial_steps() {
        let e1 = LogScaledVector::new(ProjectivePoint::basis(2, 0, NormKind::Euclidean));
        let id = apply_renorm(&e1, &GroupElement::identity(2)).unwrap();
        assert_eq!(id, e1);
        let g = GroupElement::diagonal(&[2.0, 0.5]).unwrap();
        let v = apply_renorm(&e1, &g).unwrap();
        assert_eq!(v.direction, e1.direction);
        assert!((v.log_norm - 2f64.ln()).abs() < 1e-15);
    }

    fn to_big(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    #[test]
    fn renorm_matches_exact_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mats: Vec<DMatrix<f64>> = (0..30)
            .map(|_| DMatrix::from_fn(3, 3, |_, _| rng.sample(StandardNormal)))
            .collect();
        let x0 = [0.6, -0.0, 0.8];
        let mut v = LogScaledVector::new(ProjectivePoint::from_slice(&x0, NormKind::Euclidean).unwrap());
        for m in &mats {
            v = apply_renorm(&v, &GroupElement::invertible(m.clone()).unwrap()).unwrap();
        }
        let mut exact: Vec<BigRational> = x0.iter().map(|&x| to_big(x)).collect();
        for m in &mats {
            exact = (0..3)
                .map(|i| {
                    (0..3).fold(BigRational::from_integer(BigInt::from(0)), |acc, j| {
                        acc + to_big(m[(i, j)]) * &exact[j]
                    })
                })
                .collect();
        }
        let sq = exact.iter().fold(BigRational::from_integer(BigInt::from(0)), |acc, e| acc + e * e);
        // log of the squared norm through a power-of-two split to avoid overflow
        let bits = sq.numer().bits() as i64 - sq.denom().bits() as i64;
        let scale = BigRational::from_integer(BigInt::from(2)).pow(-(bits as i32));
        let mantissa = (sq * scale).to_f64().unwrap();
        let log_norm = 0.5 * (mantissa.ln() + bits as f64 * 2f64.ln());
        assert!((v.log_norm - log_norm).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn distance_in_unit_interval(a in proptest::collection::vec(-5.0f64..5.0, 4),
                                     b in proptest::collection::vec(-5.0f64..5.0, 4)) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let x = ProjectivePoint::from_slice(&a, NormKind::Euclidean).unwrap();
            let y = ProjectivePoint::from_slice(&b, NormKind::Euclidean).unwrap();
            let d = proj_distance(&x, &y);
            prop_assert!((0.0..=1.0).contains(&d));
            let al = angle_delta(&x, &y);
            prop_assert!((al * al + d * d - 1.0).abs() < 1e-12);
        }
    }
}
