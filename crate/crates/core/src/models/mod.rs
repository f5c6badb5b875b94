//! Markov chains `W_n = F(ε_n, W_{n−1})` with observables
//! `X_n = h(ε_n, W_{n−1})`, stationary-start sampling and common random
//! numbers.
//!
//! Two chains driven by clones of one [`InnovationStream`] consume identical
//! innovation draws step for step, whatever their starting states.

use rayon::prelude::*;

pub mod ar;
pub mod matrix;
mod stream;

pub use ar::{ArModel, ArSpec, InnovationLaw, Observable};
pub use matrix::{
    step_projective, MatrixAux, MatrixLaw, MatrixModel, MatrixObservables, MatrixTrajectory,
};
pub use stream::InnovationStream;

/// A Markov chain driven by iid innovations together with a real observable.
pub trait MarkovModel: Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Innovation: Clone + Send + Sync;

    /// The fixed state burn-in runs start from.
    fn reference_start(&self) -> Self::State;

    /// Draws one innovation, advancing the stream.
    fn draw(&self, s: &mut InnovationStream) -> Self::Innovation;

    /// `(W_n, X_n)` from `W_{n−1}` and `ε_n`.
    fn step(&self, w: &Self::State, e: &Self::Innovation) -> (Self::State, f64);

    /// Burn-in length used when a run does not override it.
    fn default_burn_in(&self) -> usize;

    /// Whether a state can be regenerated and then driven by a stored
    /// innovation suffix.
    fn supports_replay(&self) -> bool {
        true
    }

    /// An almost sure bound on `|X_n|`, when the observable is bounded.
    fn observable_bound(&self) -> Option<f64> {
        None
    }

    /// True when `X_n` depends on `ε_n` alone.
    fn is_memoryless(&self) -> bool {
        false
    }
}

/// Approximate draw from the stationary law: `burn_in` steps from the
/// reference start.
///
/// The result is only approximately stationary; its bias shrinks at the
/// rate at which the chain forgets its start (see
/// [`crate::coeffs::contraction_probe`] for matrix chains).
pub fn stationary_sample<M: MarkovModel>(model: &M, burn_in: usize, s: &mut InnovationStream) -> M::State {
    let mut w = model.reference_start();
    for _ in 0..burn_in {
        let e = model.draw(s);
        w = model.step(&w, &e).0;
    }
    w
}

/// Observables and partial sums of one path; index `k − 1` holds step `k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
}

impl Trajectory {
    pub fn from_increments(x: Vec<f64>) -> Self {
        let s = x
            .iter()
            .scan(0.0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        Trajectory { x, s }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Runs `n` steps from `start`, returning the path and the final state.
pub fn simulate_trajectory<M: MarkovModel>(
    model: &M,
    start: M::State,
    n: usize,
    s: &mut InnovationStream,
) -> (Trajectory, M::State) {
    let mut w = start;
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let e = model.draw(s);
        let (next, obs) = model.step(&w, &e);
        x.push(obs);
        w = next;
    }
    (Trajectory::from_increments(x), w)
}

/// Draws `n` innovations, kept for replay.
pub fn draw_innovations<M: MarkovModel>(model: &M, n: usize, s: &mut InnovationStream) -> Vec<M::Innovation> {
    (0..n).map(|_| model.draw(s)).collect()
}

/// Observables along `innovations` from `start`.
pub fn replay<M: MarkovModel>(model: &M, start: M::State, innovations: &[M::Innovation]) -> Vec<f64> {
    let mut w = start;
    innovations
        .iter()
        .map(|e| {
            let (next, obs) = model.step(&w, e);
            w = next;
            obs
        })
        .collect()
}

/// `count` independent draws of `X₁` under the approximate stationary law,
/// replicate `r` on `stream.child(r)`.
pub fn stationary_observables<M: MarkovModel>(model: &M, count: usize, burn_in: usize, stream: &InnovationStream) -> Vec<f64> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| {
            let mut s = stream.child(r);
            let w = stationary_sample(model, burn_in, &mut s);
            let e = model.draw(&mut s);
            model.step(&w, &e).1
        })
        .collect()
}

/// `X_n − shift` on top of another model; used to centre matrix cocycles
/// at an estimated Lyapunov exponent.
#[derive(Debug, Clone)]
pub struct Centered<M> {
    pub inner: M,
    pub shift: f64,
}

impl<M: MarkovModel> Centered<M> {
    pub fn new(inner: M, shift: f64) -> Self {
        Centered { inner, shift }
    }
}

impl<M: MarkovModel> MarkovModel for Centered<M> {
    type State = M::State;
    type Innovation = M::Innovation;

    fn reference_start(&self) -> M::State {
        self.inner.reference_start()
    }

    fn draw(&self, s: &mut InnovationStream) -> M::Innovation {
        self.inner.draw(s)
    }

    fn step(&self, w: &M::State, e: &M::Innovation) -> (M::State, f64) {
        let (w, x) = self.inner.step(w, e);
        (w, x - self.shift)
    }

    fn default_burn_in(&self) -> usize {
        self.inner.default_burn_in()
    }

    fn supports_replay(&self) -> bool {
        self.inner.supports_replay()
    }

    fn observable_bound(&self) -> Option<f64> {
        self.inner.observable_bound().map(|b| b + self.shift.abs())
    }

    fn is_memoryless(&self) -> bool {
        self.inner.is_memoryless()
    }
}
