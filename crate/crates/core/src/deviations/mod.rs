//! Monte Carlo checks of large-deviation, regularity and alignment
//! properties of random matrix products.

mod alignment;
mod gap;
mod ldp;
mod probes;
mod regularity;

pub use alignment::{coefficient_alignment, AlignmentReport, AlignmentRow, CENSOR};
pub use gap::{spectral_radius_gap, GapRow, SpectralGapReport};
pub use ldp::{
    centre_agreement, ldp, ldp_cocycle, ldp_norm, ldp_wedge, lyapunov_centre, DeviationObservable,
    DeviationReport, ExceedanceCell, LdpOptions, LyapunovCentre,
};
pub use probes::{Probe, ProbePair, ProbeSet};
pub use regularity::{regularity_check, regularity_statistic, RegularityReport, RegularityRow, Stability};

use crate::error::Result;
use crate::models::MatrixLaw;

/// Weibull scale of the default law. With shape 1 and `d = 3` the cocycle
/// deviation `P(max_{k≤400} |log‖A_k x‖ − kλ| > 80)` is close to `0.01`.
pub const DEFAULT_SCALE: f64 = 1.5;

/// `Q·diag(e^Y, 1, …, e^{−Y})·Q′` with `Y` exponential of mean
/// [`DEFAULT_SCALE`].
pub fn default_law(d: usize) -> Result<MatrixLaw> {
    MatrixLaw::rotation_diagonal(d, 1.0, DEFAULT_SCALE)
}
