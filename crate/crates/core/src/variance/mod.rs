//! Autocovariances (plain, clipped and `m_k`-dependent), the block variances
//! `ν_k`, the long-run variance `σ²` and quantile-envelope covariance bounds.

mod autocov;
mod nu;
mod quantile;
mod sigma2;

pub use autocov::{
    conditional_clip_mean, covariance_set, estimate_autocov, mdep_gap, Autocov, CovOptions, CovarianceSet,
};
pub use nu::{certified_horizon, nu_from_set, nu_k, NuInputs, TAIL_TOLERANCE};
pub use quantile::{decay_tail_sum, quantile_bounds, QuantileEnvelope};
pub use sigma2::{covariance_sum, sigma2_estimate, VarianceEstimate, VarianceMethod};
