//! Evolutionary hypergradient estimation.
//!
//! The crate estimates the gradient of a validation loss with respect to
//! hyperparameters by replacing the inner gradient step on the model with a
//! small evolutionary step: perturb the parameters, weight the candidates by
//! a softmax of their training losses, and recombine them. Differentiating
//! the validation loss of the recombined model then needs first-order
//! gradients only.
//!
//! Modules:
//! - [`tape`]: reverse-mode autodiff with graph-size accounting.
//! - [`evograd`]: populations, fitness weights, both hypergradient paths, and
//!   the alternating meta-step.
//! - [`baselines`]: the closed-form 1-D oracle, the finite-difference T1-T2
//!   estimator and cost probes.
//! - [`problems`]: the 1-D bilevel problem, rotation meta-learning and
//!   loss reweighting under label noise.
//! - [`harness`]: configuration, experiment runs, JSON summaries, sweeps
//!   and the command line, on top of [`rng`] and [`metrics`].

pub mod baselines;
pub mod bilevel;
pub mod error;
pub mod evograd;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod problems;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use bilevel::Bilevel;
pub use error::{Error, Result};
pub use tape::{Op, Tape, TapeStats, Var};
pub use tensor::Tensor;
