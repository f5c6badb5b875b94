//! Lipschitz autoregressive chains `W_n = f(W_{n−1}) + ε_n` observed through
//! `X_n = g(W_n)`.
//!
//! The drift is the extremal one, `f(0) = 0` with
//! `|f′(t)| = 1 − C/(1+|t|)^τ`, whose integral has the closed form
//! `f(t) = t − C·sign(t)·((1+|t|)^{1−τ} − 1)/(1−τ)` (with `log(1+|t|)` at
//! `τ = 1`). All observables are odd and all innovation laws symmetric, so
//! `E g(W) = 0` under the stationary law.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use super::{InnovationStream, MarkovModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnovationLaw {
    Normal { sd: f64 },
    Laplace { scale: f64 },
    /// `±scale·W` with `W` Weibull of shape `shape`: tail `exp(−(t/scale)^shape)`.
    SymmetricWeibull { shape: f64, scale: f64 },
}

impl InnovationLaw {
    /// Exponent `η` in a tail bound `exp(−c|t|^η)`.
    pub fn tail_index(&self) -> f64 {
        match self {
            InnovationLaw::Normal { .. } => 2.0,
            InnovationLaw::Laplace { .. } => 1.0,
            InnovationLaw::SymmetricWeibull { shape, .. } => *shape,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            InnovationLaw::Normal { sd } => *sd,
            InnovationLaw::Laplace { scale } | InnovationLaw::SymmetricWeibull { scale, .. } => *scale,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            InnovationLaw::Normal { sd } => *sd > 0.0,
            InnovationLaw::Laplace { scale } => *scale > 0.0,
            InnovationLaw::SymmetricWeibull { shape, scale } => *shape > 0.0 && *scale > 0.0,
        };
        if ok && self.scale().is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("innovation law parameters must be positive: {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InnovationLaw::Normal { sd } => {
                let z: f64 = rng.sample(StandardNormal);
                sd * z
            }
            InnovationLaw::Laplace { scale } => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    scale * e
                } else {
                    -scale * e
                }
            }
            InnovationLaw::SymmetricWeibull { shape, scale } => {
                // validated parameters
                let w = Weibull::new(scale, shape).unwrap().sample(rng);
                if rng.random::<bool>() {
                    w
                } else {
                    -w
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Identity,
    Zero,
    /// `κ·sign(x)·((1+|x|)^ζ − 1)`, bounded by `κ|x|^ζ`.
    Power { kappa: f64, zeta: f64 },
    /// `κ·tanh(x)`.
    Tanh { kappa: f64 },
}

impl Observable {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Observable::Identity => x,
            Observable::Zero => 0.0,
            Observable::Power { kappa, zeta } => {
                kappa * x.signum() * (zeta * x.abs().ln_1p()).exp_m1()
            }
            Observable::Tanh { kappa } => kappa * x.tanh(),
        }
    }

    /// Growth exponent `ζ` in `|g(x)| ≤ κ(1 + |x|^ζ)`.
    pub fn zeta(&self) -> f64 {
        match *self {
            Observable::Identity => 1.0,
            Observable::Zero | Observable::Tanh { .. } => 0.0,
            Observable::Power { zeta, .. } => zeta,
        }
    }

    pub fn kappa(&self) -> f64 {
        match *self {
            Observable::Identity => 1.0,
            Observable::Zero => 0.0,
            Observable::Power { kappa, .. } | Observable::Tanh { kappa } => kappa,
        }
    }

    fn validate(&self) -> Result<()> {
        let (k, z) = (self.kappa(), self.zeta());
        if k >= 0.0 && k.is_finite() && (0.0..=1.0).contains(&z) {
            Ok(())
        } else {
            Err(Error::invalid(format!("observable needs kappa >= 0 and zeta in [0, 1]: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub tau: f64,
    #[serde(rename = "c")]
    pub contraction: f64,
    pub innovation: InnovationLaw,
    pub observable: Observable,
}

impl ArSpec {
    /// Linear AR(1) with slope `a`, standard normal innovations, `g = id`.
    pub fn linear(a: f64) -> Self {
        ArSpec {
            tau: 0.0,
            contraction: 1.0 - a,
            innovation: InnovationLaw::Normal { sd: 1.0 },
            observable: Observable::Identity,
        }
    }

    /// iid observable `X_n = g(ε_n)` (drift identically zero).
    pub fn iid(innovation: InnovationLaw, observable: Observable) -> Self {
        ArSpec {
            tau: 0.0,
            contraction: 1.0,
            innovation,
            observable,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.contraction > 0.0 && self.contraction <= 1.0) {
            return Err(Error::invalid(format!("C must lie in (0, 1], got {}", self.contraction)));
        }
        self.innovation.validate()?;
        self.observable.validate()
    }

    /// `∫₀^{|t|} C/(1+s)^τ ds`.
    fn pull(&self, a: f64) -> f64 {
        let c = self.contraction;
        if self.tau == 0.0 {
            c * a
        } else if self.tau == 1.0 {
            c * a.ln_1p()
        } else {
            let p = 1.0 - self.tau;
            c * (p * a.ln_1p()).exp_m1() / p
        }
    }

    pub fn drift(&self, t: f64) -> f64 {
        t - t.signum() * self.pull(t.abs())
    }

    pub fn drift_derivative(&self, t: f64) -> f64 {
        1.0 - self.contraction / (1.0 + t.abs()).powf(self.tau)
    }
}

/// `f(w) + e`.
pub fn ar_step(w: f64, e: f64, spec: &ArSpec) -> f64 {
    spec.drift(w) + e
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    spec: ArSpec,
    start: f64,
}

impl ArModel {
    pub fn new(spec: ArSpec) -> Result<Self> {
        spec.validate()?;
        Ok(ArModel { spec, start: 0.0 })
    }

    pub fn with_start(mut self, start: f64) -> Self {
        self.start = start;
        self
    }

    pub fn spec(&self) -> &ArSpec {
        &self.spec
    }
}

impl MarkovModel for ArModel {
    type State = f64;
    type Innovation = f64;

    fn reference_start(&self) -> f64 {
        self.start
    }

    fn draw(&self, s: &mut InnovationStream) -> f64 {
        self.spec.innovation.sample(s)
    }

    fn step(&self, w: &f64, e: &f64) -> (f64, f64) {
        let next = ar_step(*w, *e, &self.spec);
        (next, self.spec.observable.eval(next))
    }

    /// Ten mixing scales, where a mixing scale is the number of steps the
    /// drift needs to halve a state of a few innovation scales.
    fn default_burn_in(&self) -> usize {
        let spec = &self.spec;
        let typical = 4.0 * spec.innovation.scale() + self.start.abs();
        let rate = spec.contraction / (1.0 + typical).powf(spec.tau);
        let halving = if rate >= 1.0 {
            1.0
        } else {
            std::f64::consts::LN_2 / -(1.0 - rate).ln()
        };
        let scale = halving * (1.0 + typical).log2().max(1.0);
        (10.0 * scale).ceil().max(32.0) as usize
    }

    fn observable_bound(&self) -> Option<f64> {
        match self.spec.observable {
            Observable::Zero => Some(0.0),
            Observable::Tanh { kappa } => Some(kappa),
            _ => None,
        }
    }

    fn is_memoryless(&self) -> bool {
        self.spec.tau == 0.0 && self.spec.contraction == 1.0
    }
}
