//! Coupling coefficients `δ(n)`, tail and decay envelopes, and contraction
//! probes for matrix chains.

mod delta;
mod fit;
mod probe;

pub use delta::{estimate_delta, estimate_delta_swapped, DeltaEstimate, DeltaOptions};
pub use fit::{fit_decay, fit_tail, DecayFit, TailFit};
pub use probe::{contraction_probe, estimate_sup_delta_pairs, ContractionProbe, SupDeltaEstimate};
