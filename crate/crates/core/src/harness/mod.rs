//! Configuration, experiment runs and report files.

mod calculators;
pub mod config;
mod envelope;
pub mod output;
mod run;

pub use calculators::{ar_index_calculator, matrix_rate_calculator, ArIndices};
pub use config::{ExperimentConfig, Model, ModelSpec, Task};
pub use envelope::{fit_rate_envelope, fit_rate_series, RateEnvelopeFit};
pub use output::{Artifacts, Summary};
pub use run::{run, run_text, write_artifacts, HarnessError};
