//! The one-dimensional bilevel problem with a closed-form hypergradient.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::baselines::{oracle_hypergrad_1d, t1t2_hypergrad};
use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::evograd::{evograd_hypergrad, meta_step, HypergradMethod, MetaConfig, MetaState, NoiseKind, PerturbationConfig, StepOrder};
use crate::optim::Optimizer;
use crate::params::{HyperParams, ParamVector};
use crate::rng::{Purpose, SeedStreams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// `f_T(x, lambda) = (x - 1)^2 + lambda x^2`, `f_V(x) = (x - 0.5)^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OneDProblem;

impl OneDProblem {
    pub fn train_value(x: f64, lambda: f64) -> f64 {
        (x - 1.0).powi(2) + lambda * x * x
    }

    pub fn val_value(x: f64) -> f64 {
        (x - 0.5).powi(2)
    }

    pub fn theta(x: f64) -> ParamVector {
        ParamVector::single("x", Tensor::scalar(x))
    }

    pub fn lambda(lambda: f64) -> HyperParams {
        HyperParams::scalar("lambda", lambda)
    }
}

impl Bilevel for OneDProblem {
    type Batch = ();

    fn train_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], _: &()) -> Result<Var> {
        let x = theta[0];
        let one = tape.constant(Tensor::scalar(1.0));
        let fit = tape.mse(x, one)?;
        let sq = tape.mul(x, x)?;
        let reg = tape.mul(hyper[0], sq)?;
        tape.add(fit, reg)
    }

    fn val_loss(&self, tape: &mut Tape, theta: &[Var], _hyper: &[Var], _: &()) -> Result<Var> {
        let half = tape.constant(Tensor::scalar(0.5));
        tape.mse(theta[0], half)
    }

    fn train_grad_graph(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], _: &()) -> Option<Result<Vec<Var>>> {
        // d f_T / dx = 2(x - 1) + 2 lambda x
        let mut record = || -> Result<Vec<Var>> {
            let x = theta[0];
            let one = tape.constant(Tensor::scalar(1.0));
            let diff = tape.sub(x, one)?;
            let fit = tape.scalar_mul(diff, 2.0)?;
            let lx = tape.mul(hyper[0], x)?;
            let reg = tape.scalar_mul(lx, 2.0)?;
            Ok(vec![tape.add(fit, reg)?])
        };
        Some(record())
    }

    fn oracle_hypergrad(&self, _theta: &ParamVector, hyper: &HyperParams) -> Option<Result<Tensor>> {
        let lambda = hyper.values.flatten()[0];
        Some(oracle_hypergrad_1d(lambda).map(|g| Tensor::vector(vec![g])))
    }
}

/// Population settings for the 1-D analyses: `N(0, 1)` noise.
pub fn one_d_perturbation(k: usize, tau: f64) -> PerturbationConfig {
    PerturbationConfig {
        sigma: 1.0,
        tau,
        k,
        noise: NoiseKind::Gaussian,
    }
}

/// One hypergradient estimate at `(x, lambda)` by EvoGrad or T1-T2.
pub fn estimate_at(x: f64, lambda: f64, method: &HypergradMethod, rng: &mut impl Rng) -> Result<f64> {
    let (theta, hyper) = (OneDProblem::theta(x), OneDProblem::lambda(lambda));
    let est = match method {
        HypergradMethod::EvoGrad(cfg) => evograd_hypergrad(&OneDProblem, &theta, &hyper, &(), &(), cfg, rng)?,
        HypergradMethod::T1T2(cfg) => t1t2_hypergrad(&OneDProblem, &theta, &hyper, &(), &(), cfg)?,
        other => {
            return Err(Error::InvalidInput {
                op: "one_d_estimate",
                detail: format!("{} does not estimate from samples", other.name()),
            })
        }
    };
    Ok(est.grad.data()[0])
}

/// `reps` independent estimates at one `lambda`, each at a fresh `x ~ N(0, 1)`.
pub fn estimate_samples(lambda: f64, method: &HypergradMethod, reps: usize, streams: SeedStreams) -> Result<Vec<f64>> {
    let mut xs = streams.stream(Purpose::Data);
    let mut noise = streams.stream(Purpose::Population);
    (0..reps)
        .map(|_| {
            let x: f64 = xs.sample(StandardNormal);
            estimate_at(x, lambda, method, &mut noise)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    /// Population size; 0 for estimators without a population.
    pub k: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
    pub oracle: f64,
}

pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `count` evenly spaced values `step, 2 step, .., end`.
pub fn lambda_grid(count: usize, end: f64) -> Vec<f64> {
    (1..=count).map(|i| end * i as f64 / count as f64).collect()
}

/// Mean and spread of EvoGrad estimates over a grid of `lambda` and
/// population sizes; `base` supplies everything but `k`.
pub fn hypergrad_grid(lambdas: &[f64], ks: &[usize], base: &PerturbationConfig, reps: usize, seed: u64) -> Result<Vec<GridPoint>> {
    let methods: Vec<HypergradMethod> = ks
        .iter()
        .map(|&k| HypergradMethod::EvoGrad(PerturbationConfig { k, ..*base }))
        .collect();
    method_grid(lambdas, &methods, reps, seed)
}

/// Mean and spread of each method's estimates over a grid of `lambda`.
pub fn method_grid(lambdas: &[f64], methods: &[HypergradMethod], reps: usize, seed: u64) -> Result<Vec<GridPoint>> {
    let root = SeedStreams::new(seed);
    let mut out = Vec::with_capacity(lambdas.len() * methods.len());
    for method in methods {
        let k = match method {
            HypergradMethod::EvoGrad(cfg) | HypergradMethod::EvoGradFactorized(cfg) => cfg.k,
            _ => 0,
        };
        for (i, &lambda) in lambdas.iter().enumerate() {
            let streams = root.child((k as u64) << 32 | i as u64);
            let samples = estimate_samples(lambda, method, reps, streams)?;
            let (mean, std) = mean_std(&samples);
            out.push(GridPoint {
                lambda,
                k,
                mean,
                std,
                oracle: oracle_hypergrad_1d(lambda)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub x: f64,
    pub lambda: f64,
    pub f_val: f64,
}

/// SGD on `x` and `lambda` from `start`, `theta` first, recording the state
/// before the first step and after every step.
pub fn trajectory(start: (f64, f64), method: &HypergradMethod, steps: usize, lr: f64, seed: u64) -> Result<Vec<TrajectoryPoint>> {
    let mut state = MetaState {
        theta: OneDProblem::theta(start.0),
        hyper: OneDProblem::lambda(start.1),
        theta_opt: Optimizer::sgd(lr),
        hyper_opt: Optimizer::sgd(lr),
    };
    let cfg = MetaConfig {
        method: method.clone(),
        order: StepOrder::ThetaFirst,
    };
    let mut rng = SeedStreams::new(seed).stream(Purpose::Population);
    let point = |step: usize, s: &MetaState| {
        let x = s.theta.flatten()[0];
        TrajectoryPoint {
            step,
            x,
            lambda: s.hyper.values.flatten()[0],
            f_val: OneDProblem::val_value(x),
        }
    };
    let mut out = vec![point(0, &state)];
    for step in 1..=steps {
        meta_step(&OneDProblem, &mut state, &(), &(), &cfg, &mut rng)?;
        let p = point(step, &state);
        if !(p.lambda > -1.0) {
            // f_T has no minimizer once lambda <= -1
            return Err(Error::Divergence(format!("lambda reached {} at step {step}", p.lambda)));
        }
        out.push(p);
    }
    Ok(out)
}

/// Starting points used by the trajectory analysis.
pub const TRAJECTORY_STARTS: [(f64, f64); 5] = [(2.0, 2.0), (-1.0, 0.5), (2.0, 0.2), (-0.8, 1.6), (1.8, 1.0)];
