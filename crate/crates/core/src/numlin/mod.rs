//! Dense linear algebra on small matrices: operator norms, the size function
//! `N(g)`, exterior-square norms, spectral radii, projective distances and a
//! log-scaled vector that carries long products without overflow.
//!
//! Two geometries are supported. Invertible matrices act on the real
//! projective space with the Euclidean norm; positive allowable matrices act
//! on the nonnegative part of the ℓ¹ sphere with the ℓ¹ norm. The active norm
//! is a property of the matrix kind ([`MatrixKind::norm`]) and can be
//! overridden explicitly through [`op_norm_in`].

mod projective;

pub use projective::{angle_delta, apply_renorm, proj_distance, LogScaledVector, ProjectivePoint};

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest singular value accepted for an invertible element.
pub const SINGULAR_FLOOR: f64 = 1e-300;

/// Which vector norm the projective action and the operator norm use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    Euclidean,
    L1,
}

impl NormKind {
    pub fn of(&self, v: &DVector<f64>) -> f64 {
        match self {
            NormKind::Euclidean => v.norm(),
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    Invertible,
    PositiveAllowable,
}

impl MatrixKind {
    pub fn norm(&self) -> NormKind {
        match self {
            MatrixKind::Invertible => NormKind::Euclidean,
            MatrixKind::PositiveAllowable => NormKind::L1,
        }
    }
}

/// A validated `d × d` matrix with lazily cached singular values.
#[derive(Debug, Clone)]
pub struct GroupElement {
    entries: DMatrix<f64>,
    kind: MatrixKind,
    singular: OnceLock<Vec<f64>>,
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.entries == other.entries
    }
}

fn check_shape(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() < 2 {
        return Err(Error::invalid("dimension must be at least 2"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

impl GroupElement {
    /// An element of `GL_d(ℝ)`; rejects matrices whose smallest singular
    /// value falls below [`SINGULAR_FLOOR`].
    pub fn invertible(entries: DMatrix<f64>) -> Result<Self> {
        check_shape(&entries)?;
        let g = GroupElement {
            entries,
            kind: MatrixKind::Invertible,
            singular: OnceLock::new(),
        };
        let smin = *g.singular_values().last().unwrap();
        if !(smin > SINGULAR_FLOOR) {
            return Err(Error::Singular(format!(
                "smallest singular value {smin:e} below {SINGULAR_FLOOR:e}"
            )));
        }
        Ok(g)
    }

    /// A nonnegative matrix with a strictly positive entry in every row and
    /// every column.
    pub fn positive_allowable(entries: DMatrix<f64>) -> Result<Self> {
        check_shape(&entries)?;
        if entries.iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("positive allowable matrix has a negative entry"));
        }
        let d = entries.nrows();
        for i in 0..d {
            if !entries.row(i).iter().any(|&x| x > 0.0) {
                return Err(Error::invalid(format!("row {i} has no positive entry")));
            }
            if !entries.column(i).iter().any(|&x| x > 0.0) {
                return Err(Error::invalid(format!("column {i} has no positive entry")));
            }
        }
        Ok(GroupElement {
            entries,
            kind: MatrixKind::PositiveAllowable,
            singular: OnceLock::new(),
        })
    }

    pub fn new(kind: MatrixKind, entries: DMatrix<f64>) -> Result<Self> {
        match kind {
            MatrixKind::Invertible => Self::invertible(entries),
            MatrixKind::PositiveAllowable => Self::positive_allowable(entries),
        }
    }

    pub fn from_rows(kind: MatrixKind, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("matrix rows must all have length d"));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::new(kind, m)
    }

    /// Builds an element whose validity and singular values are known by
    /// construction (e.g. `Q · diag · Q'` with orthogonal `Q`).
    pub(crate) fn trusted(entries: DMatrix<f64>, kind: MatrixKind, singular: Option<Vec<f64>>) -> Self {
        let cache = OnceLock::new();
        if let Some(s) = singular {
            let _ = cache.set(s);
        }
        GroupElement {
            entries,
            kind,
            singular: cache,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::trusted(DMatrix::identity(d, d), MatrixKind::Invertible, Some(vec![1.0; d]))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::invertible(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn norm_kind(&self) -> NormKind {
        self.kind.norm()
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> &[f64] {
        self.singular.get_or_init(|| sorted_singular_values(&self.entries))
    }
}

pub(crate) fn sorted_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Induced ℓ¹ operator norm: the largest absolute column sum.
pub fn l1_operator_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value of an arbitrary real matrix.
pub fn top_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 2 && m.ncols() == 2 {
        // closed form from trace and determinant of mᵀm
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let fro = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = ((fro - 2.0 * det) * (fro + 2.0 * det)).max(0.0).sqrt();
        return ((fro + disc) / 2.0).sqrt();
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Operator norm under the element's own geometry.
pub fn op_norm(g: &GroupElement) -> f64 {
    op_norm_in(g, g.norm_kind())
}

pub fn op_norm_in(g: &GroupElement, norm: NormKind) -> f64 {
    match norm {
        NormKind::Euclidean => g.singular_values()[0],
        NormKind::L1 => l1_operator_norm(&g.entries),
    }
}

/// `N(g)`: `max(‖g‖, ‖g⁻¹‖)` for invertible elements (with `‖g⁻¹‖` read off
/// the smallest singular value) and `max(‖g‖₁, 1/v(g))` for positive ones.
pub fn size_n(g: &GroupElement) -> Result<f64> {
    match g.kind {
        MatrixKind::Invertible => {
            let s = g.singular_values();
            let smin = *s.last().unwrap();
            if !(smin > SINGULAR_FLOOR) {
                return Err(Error::Singular(format!("smallest singular value {smin:e}")));
            }
            Ok(s[0].max(1.0 / smin))
        }
        MatrixKind::PositiveAllowable => Ok(l1_operator_norm(&g.entries).max(1.0 / v_min(g)?)),
    }
}

/// Smallest column ℓ¹ sum of a nonnegative matrix.
pub fn matrix_v_min(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// `v(g) = inf ‖g x‖₁` over the nonnegative unit simplex.
///
/// `x ↦ ‖g x‖₁` is linear on the simplex when `g ≥ 0`, so the infimum sits at
/// a vertex.
pub fn v_min(g: &GroupElement) -> Result<f64> {
    if g.entries.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("v(g) requires a nonnegative matrix"));
    }
    Ok(matrix_v_min(&g.entries))
}

/// `‖Λ²(g)‖ = s₁(g)·s₂(g)`.
pub fn wedge2_norm(g: &GroupElement) -> f64 {
    let s = g.singular_values();
    s[0] * s[1]
}

/// The matrix of `2 × 2` minors of `m`, i.e. `Λ²(m)` in the basis
/// `e_i ∧ e_j`, `i < j`, ordered lexicographically.
///
/// Running products of exterior squares are carried with this matrix because
/// `s₂` of a long renormalized product is not recoverable from the product
/// itself.
pub fn exterior_square(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .collect();
    let n = pairs.len();
    DMatrix::from_fn(n, n, |r, c| {
        let (i, j) = pairs[r];
        let (k, l) = pairs[c];
        m[(i, k)] * m[(j, l)] - m[(i, l)] * m[(j, k)]
    })
}

/// Modulus of the largest eigenvalue of a real square matrix.
pub fn matrix_spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if m.nrows() == 2 {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let half_tr = 0.5 * (a + d);
        let det = a * d - b * c;
        let disc = half_tr * half_tr - det;
        return Ok(if disc >= 0.0 {
            let r = disc.sqrt();
            (half_tr + r).abs().max((half_tr - r).abs())
        } else {
            det.sqrt()
        });
    }
    let d = m.nrows();
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 1000 * d)
        .ok_or_else(|| Error::numerical("numlin", "spectral_radius", "Schur iteration did not converge"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

pub fn spectral_radius(g: &GroupElement) -> Result<f64> {
    matrix_spectral_radius(&g.entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| rng.sample(StandardNormal))
    }

    fn random_positive(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |_, _| rng.random_range(0.05..2.0))
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        let v: DVector<f64> = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        let n = v.norm();
        v / n
    }

    #[test]
    fn norm_trivial_cases() {
        assert!((op_norm(&GroupElement::identity(3)) - 1.0).abs() < 1e-15);
        let g = GroupElement::diagonal(&[2.0, 0.5]).unwrap();
        assert!((op_norm(&g) - 2.0).abs() < 1e-14);
        assert!((size_n(&g).unwrap() - 2.0).abs() < 1e-14);
        assert!((size_n(&GroupElement::identity(4)).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norm_matches_brute_force_in_the_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = GroupElement::invertible(random_matrix(&mut rng, 2)).unwrap();
        let best = (0..100_000)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 100_000.0;
                let x = DVector::from_vec(vec![t.cos(), t.sin()]);
                (g.entries() * x).norm()
            })
            .fold(0.0, f64::max);
        assert!((best - op_norm(&g)).abs() < 1e-6 * op_norm(&g));
    }

    #[test]
    fn norm_matches_random_direction_search_refined() {
        // random unit directions give a lower bound; power iteration from the
        // best direction closes the gap
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_matrix(&mut rng, 4);
        let g = GroupElement::invertible(m.clone()).unwrap();
        let mut best = DVector::zeros(4);
        let mut best_val = 0.0;
        for _ in 0..100_000 {
            let x = random_unit(&mut rng, 4);
            let v = (&m * &x).norm();
            if v > best_val {
                best_val = v;
                best = x;
            }
        }
        assert!(best_val <= op_norm(&g) + 1e-12);
        let mtm = m.transpose() * &m;
        let mut x = best;
        for _ in 0..500 {
            let y = &mtm * &x;
            x = &y / y.norm();
        }
        let refined = (&m * &x).norm();
        assert!((refined - op_norm(&g)).abs() < 1e-6);
    }

    #[test]
    fn size_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in 2..=5 {
            let m = random_matrix(&mut rng, d) + DMatrix::identity(d, d) * 3.0;
            let inv = m.clone().try_inverse().unwrap();
            let expect = top_singular_value(&m).max(top_singular_value(&inv));
            let g = GroupElement::invertible(m).unwrap();
            assert!((size_n(&g).unwrap() - expect).abs() < 1e-8);
            assert!(size_n(&g).unwrap() >= 1.0);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(GroupElement::invertible(m), Err(Error::Singular(_))));
        let bad = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(GroupElement::invertible(bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn allowable_checks() {
        let zero_row = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        assert!(GroupElement::positive_allowable(zero_row).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        assert!(GroupElement::positive_allowable(neg).is_err());
        let perm = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(GroupElement::positive_allowable(perm).is_ok());
    }

    #[test]
    fn v_min_cases() {
        let id = GroupElement::positive_allowable(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(v_min(&id).unwrap(), 1.0);
        let ones = GroupElement::positive_allowable(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert_eq!(v_min(&ones).unwrap(), 2.0);
        let g = GroupElement::invertible(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0])).unwrap();
        assert!(v_min(&g).is_err());
    }

    #[test]
    fn v_min_matches_simplex_sampling() {
        // Dirichlet(0.01) points cluster at the vertices, so the sampled
        // minimum approaches the true infimum
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_positive(&mut rng, 3);
        let g = GroupElement::positive_allowable(m.clone()).unwrap();
        let gamma = Gamma::new(0.01, 1.0).unwrap();
        let mut best = f64::INFINITY;
        for _ in 0..100_000 {
            let mut x = DVector::from_fn(3, |_, _| gamma.sample(&mut rng));
            let s = x.sum();
            if !(s > 0.0) {
                continue;
            }
            x /= s;
            best = best.min((&m * x).sum());
        }
        let v = v_min(&g).unwrap();
        assert!(v <= best + 1e-15);
        assert!((best - v).abs() < 1e-9);
    }

    #[test]
    fn wedge_cases() {
        assert!((wedge2_norm(&GroupElement::identity(3)) - 1.0).abs() < 1e-14);
        let g = GroupElement::diagonal(&[3.0, 2.0, 1.0]).unwrap();
        assert!((wedge2_norm(&g) - 6.0).abs() < 1e-13);
    }

    #[test]
    fn wedge_matches_explicit_minors() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for d in 2..=5 {
            for _ in 0..20 {
                let m = random_matrix(&mut rng, d);
                let g = GroupElement::invertible(m.clone()).unwrap();
                let oracle = top_singular_value(&exterior_square(&m));
                assert!((wedge2_norm(&g) - oracle).abs() < 1e-8 * oracle.max(1.0));
                assert!(wedge2_norm(&g) <= op_norm(&g).powi(2) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn spectral_radius_cases() {
        let g = GroupElement::diagonal(&[2.0, 0.5]).unwrap();
        assert!((spectral_radius(&g).unwrap() - 2.0).abs() < 1e-14);
        let t = std::f64::consts::FRAC_PI_4;
        let rot = GroupElement::invertible(DMatrix::from_row_slice(
            2,
            2,
            &[t.cos(), -t.sin(), t.sin(), t.cos()],
        ))
        .unwrap();
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-14);
        let rot3 = DMatrix::from_row_slice(3, 3, &[t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 0.5]);
        assert!((matrix_spectral_radius(&rot3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_root_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..10 {
            let m = random_positive(&mut rng, 3);
            let mut x = DVector::from_element(3, 1.0 / 3.0);
            let mut root = 0.0;
            for _ in 0..2000 {
                let y = &m * &x;
                root = y.sum();
                x = y / root;
            }
            let g = GroupElement::positive_allowable(m).unwrap();
            let rho = spectral_radius(&g).unwrap();
            assert!((rho - root).abs() < 1e-8);
            assert!(v_min(&g).unwrap() <= rho + 1e-12);
            assert!(rho <= op_norm(&g) + 1e-12);
        }
    }

    #[test]
    fn spectral_radius_bounded_by_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for d in 2..=5 {
            for _ in 0..50 {
                let g = GroupElement::invertible(random_matrix(&mut rng, d)).unwrap();
                assert!(spectral_radius(&g).unwrap() <= op_norm(&g) * (1.0 + 1e-10));
            }
        }
    }
}
