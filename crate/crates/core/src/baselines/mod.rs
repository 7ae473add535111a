//! Reference hypergradients.
//!
//! - [`oracle_hypergrad_1d`]: the closed form for the 1-D problem at its
//!   inner optimum.
//! - [`t1t2_hypergrad`]: the one-step T1-T2 estimate
//!   `d l_V/d lambda - eta * v^T d^2 l_T / d theta d lambda`, with
//!   `v = d l_V / d theta`. The mixed second derivative is never formed; its
//!   product with `v` is a central difference of two first-order gradients
//!   `d l_T / d lambda` taken at `theta +- delta * v/|v|`.
//! - [`unrolled_t1t2_hypergrad`]: the same estimator the way fast-weight
//!   implementations build it, by recording `theta' = theta - eta * grad`
//!   as a graph and differentiating through it. Used to measure the graph
//!   such implementations retain.

mod cost;

pub use cost::{cost_probe, CostReport};

use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::evograd::{Estimate, StepCost};
use crate::params::{HyperParams, ParamVector};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// `g(lambda) = (lambda - 1) / (lambda + 1)^3`, the exact hypergradient of
/// `f_V(x) = (x - 0.5)^2` at the minimizer `x = 1/(1 + lambda)` of
/// `f_T(x, lambda) = (x - 1)^2 + lambda x^2`.
pub fn oracle_hypergrad_1d(lambda: f64) -> Result<f64> {
    if !(lambda > -1.0) {
        return Err(Error::InvalidInput {
            op: "oracle_hypergrad_1d",
            detail: format!("lambda must be > -1, got {lambda}"),
        });
    }
    Ok((lambda - 1.0) / (lambda + 1.0).powi(3))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct T1T2Config {
    /// Central-difference step along the normalized validation gradient.
    pub fd_delta: f64,
    /// Inner learning rate of the differentiated step.
    pub inner_lr: f64,
}

impl Default for T1T2Config {
    fn default() -> Self {
        Self {
            fd_delta: 1e-5,
            inner_lr: 1.0,
        }
    }
}

fn flat(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}

/// First-order gradient of the training loss with respect to `lambda` at
/// fixed parameters.
fn train_hyper_grad<P: Bilevel>(
    problem: &P,
    theta: &ParamVector,
    lambda: &HyperParams,
    batch: &P::Batch,
) -> Result<(Vec<f64>, crate::tape::TapeStats)> {
    let mut tape = Tape::new();
    let hyper = lambda.values.register(&mut tape, true);
    let params = theta.register(&mut tape, false);
    let loss = problem.train_loss(&mut tape, &params, &hyper, batch)?;
    let grads = tape.backward(loss, &hyper)?;
    Ok((flat(&grads), tape.stats()))
}

pub fn t1t2_hypergrad<P: Bilevel>(
    problem: &P,
    theta: &ParamVector,
    lambda: &HyperParams,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    cfg: &T1T2Config,
) -> Result<Estimate> {
    if !(cfg.fd_delta > 0.0) {
        return Err(Error::Config(vec![format!("fd_delta must be > 0, got {}", cfg.fd_delta)]));
    }
    let mut tape = Tape::new();
    let params = theta.register(&mut tape, true);
    let hyper = lambda.values.register(&mut tape, true);
    let val = problem.val_loss(&mut tape, &params, &hyper, val_batch)?;
    let val_loss = tape.value(val)?.item();
    let mut wrt = params.clone();
    wrt.extend_from_slice(&hyper);
    let mut grads = tape.backward(val, &wrt)?;
    let direct = flat(&grads.split_off(params.len()));
    let v = theta.unflatten(&flat(&grads))?;
    let norm = v.norm();
    let mut cost = StepCost {
        peak: tape.stats(),
        forwards: 1,
        backwards: 1,
    };
    if norm == 0.0 {
        return Ok(Estimate {
            grad: Tensor::vector(direct),
            cost,
            val_loss,
            weights: None,
            tape: None,
        });
    }

    let step = cfg.fd_delta / norm;
    let mut plus = theta.clone();
    plus.axpy(step, &v)?;
    let mut minus = theta.clone();
    minus.axpy(-step, &v)?;
    let (g_plus, s_plus) = train_hyper_grad(problem, &plus, lambda, train_batch)?;
    let (g_minus, s_minus) = train_hyper_grad(problem, &minus, lambda, train_batch)?;
    cost.peak = cost.peak.max(s_plus).max(s_minus);
    cost.forwards += 2;
    cost.backwards += 2;

    let scale = cfg.inner_lr * norm / (2.0 * cfg.fd_delta);
    let grad = direct
        .iter()
        .zip(g_plus.iter().zip(&g_minus))
        .map(|(d, (p, m))| d - scale * (p - m))
        .collect();
    Ok(Estimate {
        grad: Tensor::vector(grad),
        cost,
        val_loss,
        weights: None,
        tape: None,
    })
}

/// Differentiates `l_V(theta - eta * d l_T/d theta)` with respect to
/// `lambda` through an explicitly recorded parameter gradient. The forward
/// pass, the recorded gradient and the fast weights all live on one tape,
/// and `theta` is a differentiable leaf as it is in a fast-weight model.
pub fn unrolled_t1t2_hypergrad<P: Bilevel>(
    problem: &P,
    theta: &ParamVector,
    lambda: &HyperParams,
    train_batch: &P::Batch,
    val_batch: &P::Batch,
    cfg: &T1T2Config,
) -> Result<Estimate> {
    let mut tape = Tape::new();
    let params = theta.register(&mut tape, true);
    let hyper = lambda.values.register(&mut tape, true);
    let grads = problem
        .train_grad_graph(&mut tape, &params, &hyper, train_batch)
        .ok_or_else(|| Error::InvalidInput {
            op: "unrolled_t1t2",
            detail: "problem cannot record its parameter gradient".into(),
        })??;
    let mut fast = Vec::with_capacity(params.len());
    for (&p, &g) in params.iter().zip(&grads) {
        let scaled = tape.scalar_mul(g, cfg.inner_lr)?;
        fast.push(tape.sub(p, scaled)?);
    }
    let val = problem.val_loss(&mut tape, &fast, &hyper, val_batch)?;
    let val_loss = tape.value(val)?.item();
    let grad = flat(&tape.backward(val, &hyper)?);
    Ok(Estimate {
        grad: Tensor::vector(grad),
        cost: StepCost {
            peak: tape.stats(),
            forwards: 2,
            backwards: 1,
        },
        val_loss,
        weights: None,
        tape: Some(tape),
    })
}

#[cfg(test)]
mod tests;
