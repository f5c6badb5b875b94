//! The block construction behind the strong approximation: truncation,
//! `m_k`-dependent approximation and Gaussian coupling of partial sums.

mod coupling;
mod drift;
mod paths;
mod pipeline;
mod scheme;

pub use coupling::{
    coupled_blocks, couple_path, gaussian_calibration, gaussian_control, gaussian_coupling, sub_block_layout,
    sub_block_len, BandedCholesky, BlockCovariance, ControlReport, CouplingMethod, CouplingPlan, CouplingResult,
    PathCoupling, StageIncrements, repair_covariance, spectral_density,
};
pub use drift::{variance_drift_check, DriftReport, DriftRow, EnvelopeRow};
pub use paths::{
    block_errors, estimate_clip_means, mdep_path, truncated_increments, truncated_path, ClipMeans, MdepOptions,
    MdepPath,
};
pub use pipeline::{mdep_calibration, run_pipeline, AsipOptions, AsipRun, BlockError};
pub use scheme::{block_index, clip_center, pow3, BlockRow, BlockScheme, MAX_BLOCK};
