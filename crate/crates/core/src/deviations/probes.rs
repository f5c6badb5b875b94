use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::models::InnovationStream;
use crate::numlin::{NormKind, ProjectivePoint};

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub label: String,
    pub point: ProjectivePoint,
}

/// A unit pair `(x, y)` for coefficient alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair {
    pub label: String,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

/// Finite stand-ins for suprema over directions. Maxima over a probe set are
/// lower bounds on the supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub points: Vec<Probe>,
    pub pairs: Vec<ProbePair>,
}

/// Offset of the near-orthogonal pairs: `⟨x, y⟩ ≈ 1e-3`.
const NEAR_ORTHOGONAL: f64 = 1e-3;

impl ProbeSet {
    pub fn basis(d: usize, norm: NormKind) -> Self {
        ProbeSet {
            points: (0..d)
                .map(|i| Probe {
                    label: format!("e{}", i + 1),
                    point: ProjectivePoint::basis(d, i, norm),
                })
                .collect(),
            pairs: Vec::new(),
        }
    }

    /// Basis directions, `random` uniformly random directions (absolute
    /// Gaussians on the positive cone) and the pairs
    /// `(e_i, e_{i+1} + 1e-3·e_i)`.
    pub fn standard(d: usize, norm: NormKind, random: usize, stream: &InnovationStream) -> Result<Self> {
        let mut set = Self::basis(d, norm);
        let mut s = stream.fork("probes");
        for j in 0..random {
            let mut v: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut s));
            if norm == NormKind::L1 {
                v.iter_mut().for_each(|x| *x = x.abs());
            }
            set.points.push(Probe {
                label: format!("haar{j}"),
                point: ProjectivePoint::new(v, norm)?,
            });
        }
        for i in 0..d - 1 {
            let mut x = DVector::zeros(d);
            x[i] = 1.0;
            let mut y = DVector::zeros(d);
            y[i + 1] = 1.0;
            y[i] = NEAR_ORTHOGONAL;
            let y = y.normalize();
            set.pairs.push(ProbePair {
                label: format!("near-orth{}", i + 1),
                x,
                y,
            });
        }
        Ok(set)
    }

    /// The default set: basis, 16 random directions, near-orthogonal pairs.
    pub fn default_for(d: usize, norm: NormKind, stream: &InnovationStream) -> Result<Self> {
        Self::standard(d, norm, 16, stream)
    }
}
