//! Evolutionary hypergradient estimation.
//!
//! One estimate takes the current parameters `theta` and hyperparameters
//! `lambda` through:
//!
//! 1. `K` candidates `theta_k = theta + eps_k` ([`sample_population`]);
//! 2. training losses `l_k` of every candidate, which depend on `lambda`;
//! 3. fitness weights `w = softmax(-l / tau)` ([`fitness_weights`]);
//! 4. the recombined model `theta* = sum_k w_k theta_k` ([`combine`]),
//!    evaluated as `theta + sum_k w_k eps_k`, which is the same point since
//!    the weights sum to one. The weight gradient then sees `g . eps_k`
//!    directly instead of recovering it from the much larger `g . theta_k`;
//! 5. the validation loss at `theta*`, differentiated with respect to
//!    `lambda`.
//!
//! The candidates are constants on the tape, so no gradient with respect to
//! `theta` is ever taken along the way. [`evograd_hypergrad`] runs the five
//! steps on a single tape and does one reverse sweep. [`factorized_hypergrad`]
//! computes the same quantity as `g_v^T E (dw/dl) (dl/dlambda)`, with the
//! validation gradient `g_v` at `theta*`, the noise matrix `E` and one
//! independent loss-to-hyperparameter gradient per candidate.

mod meta;

pub use meta::{base_update, meta_step, HypergradMethod, MetaConfig, MetaState, StepOrder, StepReport};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bilevel::Bilevel;
use crate::error::{shape_err, Error, Result};
use crate::params::{HyperParams, ParamVector};
use crate::tape::{Tape, TapeStats, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Each coordinate drawn from `N(0, sigma^2)`.
    Gaussian,
    /// Each coordinate is `sigma * sign(z)` with `z ~ N(0, 1)`.
    SignGaussian,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::SignGaussian => "sign-gaussian",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationConfig {
    /// Perturbation scale, used as the standard deviation of Gaussian noise.
    pub sigma: f64,
    /// Softmax temperature applied to the candidate losses.
    pub tau: f64,
    /// Population size.
    pub k: usize,
    pub noise: NoiseKind,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            sigma: 0.001,
            tau: 0.05,
            k: 2,
            noise: NoiseKind::SignGaussian,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            errs.push(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            errs.push(format!("tau must be finite and > 0, got {}", self.tau));
        }
        if self.k < 2 {
            errs.push(format!("k must be >= 2, got {}", self.k));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Perturbed copies of a base parameter vector.
#[derive(Clone, Debug)]
pub struct Population {
    pub base: ParamVector,
    /// Realized perturbations: `candidates[k] - base`, computed in floating
    /// point, so the difference identity holds exactly.
    pub epsilons: Vec<ParamVector>,
    pub candidates: Vec<ParamVector>,
}

impl Population {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }
}

pub fn sample_population(theta: &ParamVector, cfg: &PerturbationConfig, rng: &mut impl Rng) -> Result<Population> {
    cfg.validate()?;
    let mut epsilons = Vec::with_capacity(cfg.k);
    let mut candidates = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let candidate = {
            let flat: Vec<f64> = theta
                .flatten()
                .into_iter()
                .map(|x| {
                    let z: f64 = rng.sample(StandardNormal);
                    let noise = match cfg.noise {
                        NoiseKind::Gaussian => cfg.sigma * z,
                        NoiseKind::SignGaussian => {
                            if z < 0.0 {
                                -cfg.sigma
                            } else {
                                cfg.sigma
                            }
                        }
                    };
                    x + noise
                })
                .collect();
            theta.unflatten(&flat)?
        };
        epsilons.push(candidate.zip_with(theta, |c, b| c - b)?);
        candidates.push(candidate);
    }
    Ok(Population {
        base: theta.clone(),
        epsilons,
        candidates,
    })
}

/// Softmax fitness of a population and the losses it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FitnessWeights {
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
}

impl FitnessWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `softmax(-losses / tau)`, max-subtracted.
pub fn fitness_weights(losses: &[f64], tau: f64) -> Result<FitnessWeights> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput {
            op: "fitness_weights",
            detail: format!("tau must be > 0, got {tau}"),
        });
    }
    if losses.is_empty() {
        return Err(Error::InvalidInput {
            op: "fitness_weights",
            detail: "no losses".into(),
        });
    }
    if let Some((index, &value)) = losses.iter().enumerate().find(|(_, l)| !l.is_finite()) {
        return Err(Error::NonFiniteLoss { index, value });
    }
    // same arithmetic as the tape path: scale by -1/tau, then softmax
    let scale = -1.0 / tau;
    let logits: Vec<f64> = losses.iter().map(|l| scale * l).collect();
    let weights = crate::tape::softmax_rows(&logits, logits.len());
    Ok(FitnessWeights {
        weights,
        losses: losses.to_vec(),
    })
}

/// `dw/dl` as a `K x K` matrix: `-(diag(w) - w w^T) / tau`.
pub fn softmax_jacobian(w: &FitnessWeights, tau: f64) -> Vec<Vec<f64>> {
    let k = w.len();
    let mut jac = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            let delta = if i == j { w.weights[i] } else { 0.0 };
            jac[i][j] = -(delta - w.weights[i] * w.weights[j]) / tau;
        }
    }
    jac
}

/// `sum_k w_k theta_k`, segment by segment, evaluated as
/// `theta + sum_k w_k eps_k`.
pub fn combine(pop: &Population, w: &FitnessWeights) -> Result<ParamVector> {
    if w.len() != pop.k() {
        return Err(shape_err(
            "combine",
            format!("{} weights for {} candidates", w.len(), pop.k()),
        ));
    }
    let mut out = pop.base.clone();
    for (eps, &wk) in pop.epsilons.iter().zip(&w.weights) {
        out.axpy(wk, eps)?;
    }
    Ok(out)
}

/// Records `base + sum_k w_k eps_k` on `tape`, one `offset_combine` per
/// segment.
pub fn combine_on_tape(tape: &mut Tape, weights: Var, base: &[Var], epsilons: &[Vec<Var>]) -> Result<Vec<Var>> {
    base.iter()
        .enumerate()
        .map(|(s, &b)| {
            let parts: Vec<Var> = epsilons.iter().map(|e| e[s]).collect();
            tape.offset_combine(b, weights, &parts)
        })
        .collect()
}

/// Work done by one estimate or step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCost {
    /// Largest tape (node count, retained bytes) alive at any point.
    pub peak: TapeStats,
    /// Loss evaluations (training or validation).
    pub forwards: usize,
    /// Reverse sweeps.
    pub backwards: usize,
}

impl StepCost {
    pub fn merge(self, other: StepCost) -> StepCost {
        StepCost {
            peak: self.peak.max(other.peak),
            forwards: self.forwards + other.forwards,
            backwards: self.backwards + other.backwards,
        }
    }
}

/// A hypergradient together with what it cost to compute.
#[derive(Debug)]
pub struct Estimate {
    /// `d l_V / d lambda`, flattened in segment order.
    pub grad: Tensor,
    pub cost: StepCost,
    /// Validation loss at the parameters the estimator evaluated.
    pub val_loss: f64,
    pub weights: Option<FitnessWeights>,
    /// The recorded graph, for estimators that use a single tape.
    pub tape: Option<Tape>,
}

fn flatten_grads(grads: Vec<Tensor>) -> Tensor {
    Tensor::vector(grads.into_iter().flat_map(Tensor::into_data).collect())
}

fn scalar_value(tape: &Tape, v: Var, what: &'static str) -> Result<f64> {
    let t = tape.value(v)?;
    if t.len() != 1 {
        return Err(Error::InvalidInput {
            op: what,
            detail: format!("loss must hold one element, got shape {:?}", t.shape()),
        });
    }
    Ok(t.item())
}

/// Single-tape estimate: every step recorded, one reverse sweep to `lambda`.
pub fn evograd_hypergrad<P: Bilevel>(
    problem: &P,
    theta: &ParamVector,
    lambda: &HyperParams,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    cfg: &PerturbationConfig,
    rng: &mut impl Rng,
) -> Result<Estimate> {
    let pop = sample_population(theta, cfg, rng)?;
    let mut tape = Tape::new();
    let hyper = lambda.values.register(&mut tape, true);

    let mut loss_vars = Vec::with_capacity(cfg.k);
    let mut losses = Vec::with_capacity(cfg.k);
    for (index, cand) in pop.candidates.iter().enumerate() {
        let vars = cand.register(&mut tape, false);
        let loss = problem.train_loss(&mut tape, &vars, &hyper, train_batch)?;
        let value = scalar_value(&tape, loss, "train_loss")?;
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { index, value });
        }
        loss_vars.push(loss);
        losses.push(value);
    }
    let stacked = tape.stack(&loss_vars)?;
    let logits = tape.scalar_mul(stacked, -1.0 / cfg.tau)?;
    let w = tape.softmax(logits)?;
    let base = pop.base.register(&mut tape, false);
    let eps: Vec<Vec<Var>> = pop.epsilons.iter().map(|e| e.register(&mut tape, false)).collect();
    let combined = combine_on_tape(&mut tape, w, &base, &eps)?;
    let val = problem.val_loss(&mut tape, &combined, &hyper, val_batch)?;
    let val_loss = scalar_value(&tape, val, "val_loss")?;

    let mut reachable = false;
    for &h in &hyper {
        reachable |= tape.depends_on(val, h)?;
    }
    if !reachable {
        return Err(Error::NoHyperPath);
    }
    let grads = tape.backward(val, &hyper)?;
    let weights = FitnessWeights {
        weights: tape.value(w)?.data().to_vec(),
        losses,
    };
    Ok(Estimate {
        grad: flatten_grads(grads),
        cost: StepCost {
            peak: tape.stats(),
            forwards: cfg.k + 1,
            backwards: 1,
        },
        val_loss,
        weights: Some(weights),
        tape: Some(tape),
    })
}

struct CandidateRow {
    loss: f64,
    grad: Vec<f64>,
    reaches: bool,
    stats: TapeStats,
}

/// Factorized estimate `g_v^T E (dw/dl) (dl/dlambda)`.
///
/// The per-candidate gradients are independent and run in parallel; rows are
/// reduced in candidate order, so the result does not depend on scheduling.
/// Draws the same population as [`evograd_hypergrad`] from the same `rng`.
pub fn factorized_hypergrad<P>(
    problem: &P,
    theta: &ParamVector,
    lambda: &HyperParams,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    cfg: &PerturbationConfig,
    rng: &mut impl Rng,
) -> Result<Estimate>
where
    P: Bilevel + Sync,
    P::Batch: Sync,
{
    let pop = sample_population(theta, cfg, rng)?;
    let rows: Vec<CandidateRow> = pop
        .candidates
        .par_iter()
        .enumerate()
        .map(|(index, cand)| {
            let mut tape = Tape::new();
            let hyper = lambda.values.register(&mut tape, true);
            let vars = cand.register(&mut tape, false);
            let loss = problem.train_loss(&mut tape, &vars, &hyper, train_batch)?;
            let value = scalar_value(&tape, loss, "train_loss")?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { index, value });
            }
            let mut reaches = false;
            for &h in &hyper {
                reaches |= tape.depends_on(loss, h)?;
            }
            let grad = flatten_grads(tape.backward(loss, &hyper)?).into_data();
            Ok(CandidateRow {
                loss: value,
                grad,
                reaches,
                stats: tape.stats(),
            })
        })
        .collect::<Result<_>>()?;

    let losses: Vec<f64> = rows.iter().map(|r| r.loss).collect();
    let w = fitness_weights(&losses, cfg.tau)?;
    let jac = softmax_jacobian(&w, cfg.tau);
    let combined = combine(&pop, &w)?;

    let mut tape = Tape::new();
    let hyper = lambda.values.register(&mut tape, true);
    let theta_star = combined.register(&mut tape, true);
    let val = problem.val_loss(&mut tape, &theta_star, &hyper, val_batch)?;
    let val_loss = scalar_value(&tape, val, "val_loss")?;
    let mut direct_path = false;
    for &h in &hyper {
        direct_path |= tape.depends_on(val, h)?;
    }
    if !direct_path && !rows.iter().any(|r| r.reaches) {
        return Err(Error::NoHyperPath);
    }
    let mut wrt = theta_star.clone();
    wrt.extend_from_slice(&hyper);
    let mut grads = tape.backward(val, &wrt)?;
    let direct = flatten_grads(grads.split_off(theta_star.len()));
    let g_val = combined.unflatten(&flatten_grads(grads).into_data())?;

    // projection of the validation gradient onto the noise directions
    let projected: Vec<f64> = pop.epsilons.iter().map(|eps| g_val.dot(eps)).collect();
    // p^T (dw/dl): one coefficient per candidate loss
    let coeffs: Vec<f64> = (0..cfg.k)
        .map(|j| (0..cfg.k).map(|i| projected[i] * jac[i][j]).sum())
        .collect();
    let mut out = direct.into_data();
    for (row, c) in rows.iter().zip(&coeffs) {
        for (o, g) in out.iter_mut().zip(&row.grad) {
            *o += c * g;
        }
    }

    let peak = rows.iter().fold(tape.stats(), |acc, r| acc.max(r.stats));
    Ok(Estimate {
        grad: Tensor::vector(out),
        cost: StepCost {
            peak,
            forwards: cfg.k + 1,
            backwards: cfg.k + 1,
        },
        val_loss,
        weights: Some(w),
        tape: None,
    })
}
