use std::time::{Duration, Instant};

use rand::Rng;

use super::{evograd_hypergrad, factorized_hypergrad, Estimate, PerturbationConfig, StepCost};
use crate::baselines::{t1t2_hypergrad, unrolled_t1t2_hypergrad, T1T2Config};
use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::{HyperParams, ParamVector};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOrder {
    /// Update `theta`, then estimate the hypergradient at the new `theta`.
    ThetaFirst,
    /// Hyperparameter update first, then the ordinary update on `theta`.
    HyperFirst,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HypergradMethod {
    EvoGrad(PerturbationConfig),
    EvoGradFactorized(PerturbationConfig),
    T1T2(T1T2Config),
    /// T1-T2 through an explicitly recorded parameter gradient.
    T1T2Unrolled(T1T2Config),
    /// The problem's closed-form hypergradient.
    Oracle,
    /// No hyperparameter learning; `theta` trains alone.
    Zero,
}

impl HypergradMethod {
    pub fn name(&self) -> &'static str {
        match self {
            HypergradMethod::EvoGrad(_) => "evograd",
            HypergradMethod::EvoGradFactorized(_) => "evograd-factorized",
            HypergradMethod::T1T2(_) => "t1t2",
            HypergradMethod::T1T2Unrolled(_) => "t1t2-unrolled",
            HypergradMethod::Oracle => "oracle",
            HypergradMethod::Zero => "none",
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetaConfig {
    pub method: HypergradMethod,
    pub order: StepOrder,
}

#[derive(Clone, Debug)]
pub struct MetaState {
    pub theta: ParamVector,
    pub hyper: HyperParams,
    pub theta_opt: Optimizer,
    pub hyper_opt: Optimizer,
}

#[derive(Debug)]
pub struct StepReport {
    /// Training loss at `theta` before its update.
    pub train_loss: f64,
    /// Validation loss seen by the hypergradient estimator, if it computed one.
    pub val_loss: Option<f64>,
    pub hypergrad: Tensor,
    pub cost: StepCost,
    /// Monotonic time spent inside the step.
    pub wall: Duration,
}

/// One ordinary gradient step on `theta` with `lambda` held fixed.
pub fn base_update<P: Bilevel>(problem: &P, state: &mut MetaState, batch: &P::Batch) -> Result<(f64, StepCost)> {
    let mut tape = Tape::new();
    let theta = state.theta.register(&mut tape, true);
    let hyper = state.hyper.values.register(&mut tape, false);
    let loss = problem.train_loss(&mut tape, &theta, &hyper, batch)?;
    let value = tape.value(loss)?.item();
    if !value.is_finite() {
        return Err(Error::Divergence(format!("training loss became {value}")));
    }
    let grads = tape.backward(loss, &theta)?;
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    state.theta_opt.step(&mut state.theta, &flat)?;
    if !state.theta.all_finite() {
        return Err(Error::Divergence("model parameters became non-finite".into()));
    }
    Ok((
        value,
        StepCost {
            peak: tape.stats(),
            forwards: 1,
            backwards: 1,
        },
    ))
}

fn hypergradient<P>(
    problem: &P,
    state: &MetaState,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    method: &HypergradMethod,
    rng: &mut impl Rng,
) -> Result<Estimate>
where
    P: Bilevel + Sync,
    P::Batch: Sync,
{
    let (theta, hyper) = (&state.theta, &state.hyper);
    match method {
        HypergradMethod::EvoGrad(cfg) => evograd_hypergrad(problem, theta, hyper, train_batch, val_batch, cfg, rng),
        HypergradMethod::EvoGradFactorized(cfg) => {
            factorized_hypergrad(problem, theta, hyper, train_batch, val_batch, cfg, rng)
        }
        HypergradMethod::T1T2(cfg) => t1t2_hypergrad(problem, theta, hyper, train_batch, val_batch, cfg),
        HypergradMethod::T1T2Unrolled(cfg) => {
            unrolled_t1t2_hypergrad(problem, theta, hyper, train_batch, val_batch, cfg)
        }
        HypergradMethod::Oracle => {
            let grad = problem.oracle_hypergrad(theta, hyper).ok_or_else(|| Error::InvalidInput {
                op: "meta_step",
                detail: "this problem has no closed-form hypergradient".into(),
            })??;
            Ok(Estimate {
                grad,
                cost: StepCost::default(),
                val_loss: f64::NAN,
                weights: None,
                tape: None,
            })
        }
        HypergradMethod::Zero => Ok(Estimate {
            grad: Tensor::zeros(&[hyper.dim()]),
            cost: StepCost::default(),
            val_loss: f64::NAN,
            weights: None,
            tape: None,
        }),
    }
}

/// One alternating step: an ordinary update of `theta` on the training loss
/// and a hyperparameter update along the estimated hypergradient, in the
/// configured order.
pub fn meta_step<P>(
    problem: &P,
    state: &mut MetaState,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    cfg: &MetaConfig,
    rng: &mut impl Rng,
) -> Result<StepReport>
where
    P: Bilevel + Sync,
    P::Batch: Sync,
{
    let start = Instant::now();
    let mut hyper_step = |state: &mut MetaState| -> Result<Estimate> {
        let est = hypergradient(problem, state, train_batch, val_batch, &cfg.method, rng)?;
        if !est.grad.all_finite() {
            return Err(Error::Divergence(format!("{} hypergradient became non-finite", cfg.method.name())));
        }
        if !matches!(cfg.method, HypergradMethod::Zero) {
            let mut values = state.hyper.values.clone();
            state.hyper_opt.step(&mut values, est.grad.data())?;
            if !values.all_finite() {
                return Err(Error::Divergence("hyperparameters became non-finite".into()));
            }
            state.hyper.values = values;
        }
        Ok(est)
    };

    let (train_loss, base_cost, est) = match cfg.order {
        StepOrder::ThetaFirst => {
            let (loss, cost) = base_update(problem, state, train_batch)?;
            let est = hyper_step(state)?;
            (loss, cost, est)
        }
        StepOrder::HyperFirst => {
            let est = hyper_step(state)?;
            let (loss, cost) = base_update(problem, state, train_batch)?;
            (loss, cost, est)
        }
    };
    let val_loss = est.val_loss.is_finite().then_some(est.val_loss);
    Ok(StepReport {
        train_loss,
        val_loss,
        cost: base_cost.merge(est.cost),
        hypergrad: est.grad,
        wall: start.elapsed(),
    })
}
