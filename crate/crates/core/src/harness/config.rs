//! The experiment file: one TOML document, unknown keys rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::asip::BlockScheme;
use crate::error::{Error, Result};
use crate::models::{ArModel, ArSpec, MatrixLaw, MatrixModel};
use crate::numlin::{GroupElement, MatrixKind, ProjectivePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Delta,
    Tail,
    Lyapunov,
    Variance,
    Asip,
    Deviations,
    FullReport,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Delta => "delta",
            Task::Tail => "tail",
            Task::Lyapunov => "lyapunov",
            Task::Variance => "variance",
            Task::Asip => "asip",
            Task::Deviations => "deviations",
            Task::FullReport => "full-report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    /// Row-major entries.
    pub matrix: Vec<Vec<f64>>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    FiniteSupport {
        atoms: Vec<AtomSpec>,
        #[serde(default)]
        positive: bool,
    },
    RotationDiagonal {
        d: usize,
        shape: f64,
        scale: f64,
    },
    PositiveRandom {
        d: usize,
        shape: f64,
        scale: f64,
        #[serde(default)]
        zero_prob: f64,
    },
    /// The default sub-exponential law of the deviation checks.
    Default {
        d: usize,
    },
}

impl LawSpec {
    pub fn build(&self) -> Result<MatrixLaw> {
        match self {
            LawSpec::FiniteSupport { atoms, positive } => {
                let kind = if *positive {
                    MatrixKind::PositiveAllowable
                } else {
                    MatrixKind::Invertible
                };
                let atoms = atoms
                    .iter()
                    .map(|a| Ok((GroupElement::from_rows(kind, &a.matrix)?, a.prob)))
                    .collect::<Result<Vec<_>>>()?;
                MatrixLaw::finite_support(atoms)
            }
            LawSpec::RotationDiagonal { d, shape, scale } => MatrixLaw::rotation_diagonal(*d, *shape, *scale),
            LawSpec::PositiveRandom {
                d,
                shape,
                scale,
                zero_prob,
            } => MatrixLaw::positive_random(*d, *shape, *scale, *zero_prob),
            LawSpec::Default { d } => crate::deviations::default_law(*d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub law: LawSpec,
    /// Start direction; `e₁` or the simplex barycentre by default.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Ar(ArSpec),
    Matrix(MatrixSpec),
}

/// A built model.
#[derive(Debug, Clone)]
pub enum Model {
    Ar(ArModel),
    Matrix(MatrixModel),
}

impl ModelSpec {
    pub fn build(&self, burn_in: Option<usize>) -> Result<Model> {
        match self {
            ModelSpec::Ar(spec) => Ok(Model::Ar(ArModel::new(*spec)?)),
            ModelSpec::Matrix(m) => {
                let law = m.law.build()?;
                let norm = law.norm_kind();
                let mut model = MatrixModel::new(law);
                if let Some(v) = &m.start {
                    model = model.with_start(ProjectivePoint::from_slice(v, norm)?)?;
                }
                if let Some(b) = burn_in {
                    model = model.with_burn_in(b);
                }
                Ok(Model::Matrix(model))
            }
        }
    }
}

/// The `(γ₁, γ₂, c, b)` of a block scheme given directly instead of fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub gamma1: f64,
    /// Omit for bounded observables.
    #[serde(default = "infinite")]
    pub gamma2: f64,
    pub c: f64,
    pub b: f64,
}

fn infinite() -> f64 {
    f64::INFINITY
}

impl SchemeSpec {
    pub fn build(&self) -> Result<BlockScheme> {
        BlockScheme::new(self.gamma1, self.gamma2, self.c, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Standard errors allowed in agreement checks.
    pub sigmas: f64,
    /// Path-wise slack of exact identities.
    pub identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sigmas: 3.0,
            identity: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Grid and replicates of the `δ̂` run behind the decay fit.
    pub delta_grid: Vec<usize>,
    pub delta_replicates: usize,
    /// Draws of `|X₁|` behind the tail fit.
    pub tail_samples: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            delta_grid: (2..=12).map(|i| 4 * i).collect(),
            delta_replicates: 10_000,
            tail_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceSection {
    /// Block indices at which `ν̂_k` is reported.
    pub blocks: Vec<u32>,
    pub cov_replicates: usize,
    pub inner: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        VarianceSection {
            blocks: vec![4, 6, 8],
            cov_replicates: 10_000,
            inner: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AsipSection {
    pub inner: usize,
    pub clip_draws: usize,
    pub cov_replicates: usize,
    /// `whitening` or `sub_block_quantile`.
    pub method: String,
    /// Calibration sums per block for the quantile coupling.
    pub calibration: usize,
    pub bootstrap: usize,
    /// Use `E X = observable_mean` as a control variate for the clip means.
    pub control_variate: bool,
    pub observable_mean: f64,
}

impl Default for AsipSection {
    fn default() -> Self {
        AsipSection {
            inner: 8,
            clip_draws: 100_000,
            cov_replicates: 2000,
            method: "whitening".into(),
            calibration: 512,
            bootstrap: 200,
            control_variate: true,
            observable_mean: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationSection {
    pub epsilon: f64,
    /// Steps and replicates of the `λ̂` preprocessing.
    pub centre_steps: usize,
    pub centre_replicates: usize,
    /// Random probe directions on top of the basis.
    pub random_probes: usize,
    pub etas: Vec<f64>,
    pub regularity_grid: Vec<usize>,
    pub regularity_replicates: usize,
    pub alignment_grid: Vec<usize>,
    pub alignment_replicates: usize,
    pub gap_epsilon: f64,
    pub gap_ells: Vec<usize>,
    pub gap_grid: Vec<usize>,
    pub gap_replicates: usize,
}

impl Default for DeviationSection {
    fn default() -> Self {
        DeviationSection {
            epsilon: 0.2,
            centre_steps: 5000,
            centre_replicates: 64,
            random_probes: 16,
            etas: vec![0.05, 0.1, 0.2],
            regularity_grid: vec![1000, 10_000],
            regularity_replicates: 400,
            alignment_grid: vec![10, 30, 100, 300, 1000],
            alignment_replicates: 500,
            gap_epsilon: 0.1,
            gap_ells: vec![1, 2, 5, 10, 20, 50],
            gap_grid: vec![50, 200],
            gap_replicates: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub model: ModelSpec,
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub scheme: Option<SchemeSpec>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub variance: VarianceSection,
    #[serde(default)]
    pub asip: AsipSection,
    #[serde(default)]
    pub deviations: DeviationSection,
}

impl ExperimentConfig {
    /// Parses and validates; the error text names the offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] < 2 {
            return Err(Error::invalid("n_grid must be strictly increasing and start at 2 or more"));
        }
        if self.replicates < 2 {
            return Err(Error::invalid("replicates must be at least 2"));
        }
        if !matches!(self.asip.method.as_str(), "whitening" | "sub_block_quantile") {
            return Err(Error::invalid(format!("asip.method: unknown coupling method {:?}", self.asip.method)));
        }
        if let Some(s) = &self.scheme {
            s.build()?;
        }
        if let ModelSpec::Matrix(m) = &self.model {
            m.law.build()?;
        }
        if let ModelSpec::Ar(a) = &self.model {
            a.validate()?;
        }
        Ok(())
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self.model, ModelSpec::Matrix(_))
    }
}
