#![allow(dead_code)]

use evograd::bilevel::Bilevel;
use evograd::evograd::{evograd_hypergrad, factorized_hypergrad, PerturbationConfig};
use evograd::params::{HyperParams, HyperRole, ParamVector};
use evograd::problems::reweight::{ReweightProblem, Weighting};
use evograd::problems::LabeledSet;
use evograd::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One operator under test: input shapes, an input transform that keeps
/// samples away from kinks, and the graph to differentiate.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub adjust: fn(f64) -> f64,
    pub build: fn(&mut Tape, &[Var]) -> Result<Var>,
}

fn keep(x: f64) -> f64 {
    x
}

fn off_zero(x: f64) -> f64 {
    if x >= 0.0 {
        x + 0.1
    } else {
        x - 0.1
    }
}

/// Reduces any output to a scalar through a fixed, non-uniform probe so every
/// output coordinate contributes with a different weight.
pub fn probe(tape: &mut Tape, y: Var) -> Result<Var> {
    let shape = tape.shape(y)?.to_vec();
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (0..n).map(|i| 0.5 + (1.3 * i as f64).sin()).collect();
    let p = tape.constant(Tensor::new(shape, weights)?);
    let prod = tape.mul(y, p)?;
    tape.sum(prod)
}

pub fn op_cases() -> Vec<OpCase> {
    fn case(name: &'static str, shapes: &[&[usize]], adjust: fn(f64) -> f64, build: fn(&mut Tape, &[Var]) -> Result<Var>) -> OpCase {
        OpCase {
            name,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            adjust,
            build,
        }
    }
    vec![
        case("add", &[&[2, 3], &[2, 3]], keep, |t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y)
        }),
        case("sub", &[&[2, 3], &[2, 3]], keep, |t, v| {
            let y = t.sub(v[0], v[1])?;
            probe(t, y)
        }),
        case("mul", &[&[2, 3], &[2, 3]], keep, |t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y)
        }),
        case("mul_broadcast", &[&[], &[2, 3]], keep, |t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y)
        }),
        case("scalar_mul", &[&[4]], keep, |t, v| {
            let y = t.scalar_mul(v[0], -2.5)?;
            probe(t, y)
        }),
        case("matmul", &[&[2, 3], &[3, 4]], keep, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y)
        }),
        case("transpose", &[&[2, 3]], keep, |t, v| {
            let y = t.transpose(v[0])?;
            probe(t, y)
        }),
        case("reshape", &[&[2, 3]], keep, |t, v| {
            let y = t.reshape(v[0], &[3, 2])?;
            probe(t, y)
        }),
        case("relu", &[&[2, 3]], off_zero, |t, v| {
            let y = t.relu(v[0])?;
            probe(t, y)
        }),
        case("sigmoid", &[&[2, 3]], keep, |t, v| {
            let y = t.sigmoid(v[0])?;
            probe(t, y)
        }),
        case("softmax", &[&[2, 3]], keep, |t, v| {
            let y = t.softmax(v[0])?;
            probe(t, y)
        }),
        case("log_softmax", &[&[2, 3]], keep, |t, v| {
            let y = t.log_softmax(v[0])?;
            probe(t, y)
        }),
        case("cross_entropy", &[&[3, 4]], keep, |t, v| {
            let y = t.cross_entropy(v[0], &[0, 3, 1])?;
            probe(t, y)
        }),
        case("mse", &[&[2, 3], &[2, 3]], keep, |t, v| t.mse(v[0], v[1])),
        case("sum", &[&[2, 3]], keep, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
        case("mean", &[&[2, 3]], keep, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
        case("stack", &[&[], &[], &[]], keep, |t, v| {
            let y = t.stack(v)?;
            probe(t, y)
        }),
        case("affine_combine", &[&[3], &[2, 2], &[2, 2], &[2, 2]], keep, |t, v| {
            let y = t.affine_combine(v[0], &v[1..])?;
            probe(t, y)
        }),
        case("offset_combine", &[&[2, 2], &[3], &[2, 2], &[2, 2], &[2, 2]], keep, |t, v| {
            let y = t.offset_combine(v[0], v[1], &v[2..])?;
            probe(t, y)
        }),
        case("rotate2d", &[&[4, 2], &[]], keep, |t, v| {
            let y = t.rotate2d(v[0], v[1])?;
            probe(t, y)
        }),
        case("mlp_block", &[&[3, 4], &[4, 5], &[5, 3]], off_zero, |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let a = t.relu(h)?;
            let o = t.matmul(a, v[2])?;
            let ce = t.cross_entropy(o, &[2, 0, 1])?;
            t.mean(ce)
        }),
    ]
}

pub fn total_len(shapes: &[Vec<usize>]) -> usize {
    shapes.iter().map(|s| s.iter().product::<usize>()).sum()
}

/// Splits a flat sample into the case's input tensors.
pub fn split_inputs(case: &OpCase, flat: &[f64]) -> Vec<Tensor> {
    let mut out = Vec::new();
    let mut at = 0;
    for s in &case.shapes {
        let n: usize = s.iter().product();
        let data = flat[at..at + n].iter().map(|&x| (case.adjust)(x)).collect();
        out.push(Tensor::new(s.clone(), data).unwrap());
        at += n;
    }
    out
}

pub fn eval(case: &OpCase, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = (case.build)(&mut tape, &vars).unwrap();
    tape.value(y).unwrap().item()
}

pub fn analytic(case: &OpCase, inputs: &[Tensor]) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let y = (case.build)(&mut tape, &vars).unwrap();
    tape.backward(y, &vars).unwrap()
}

/// Largest relative disagreement between reverse-mode and central
/// differences, `|a - n| / max(1, |a|, |n|)`, over every input coordinate.
pub fn gradcheck(case: &OpCase, inputs: &[Tensor], h: f64) -> f64 {
    let grads = analytic(case, inputs);
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let mut up = inputs.to_vec();
            up[i].data_mut()[j] += h;
            let mut down = inputs.to_vec();
            down[i].data_mut()[j] -= h;
            let numeric = (eval(case, &up) - eval(case, &down)) / (2.0 * h);
            let a = g.data()[j];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Polynomial bilevel problem with three scalar parameters and two scalar
/// hyperparameters:
///
/// `l_T = l0 t0^2 + l1 t0 t1 + l0 l1 t2^3 + l1^2 t1^2 + t0 t1 t2`
/// `l_V = sum_i (t_i - c_i)^2 + t0 t1`
pub struct Poly {
    pub c: [f64; 3],
}

impl Poly {
    pub fn theta(t: [f64; 3]) -> ParamVector {
        ParamVector::new((0..3).map(|i| (format!("t{i}"), Tensor::scalar(t[i]))).collect())
    }

    pub fn lambda(l: [f64; 2]) -> HyperParams {
        let values = ParamVector::new((0..2).map(|i| (format!("l{i}"), Tensor::scalar(l[i]))).collect());
        HyperParams::new(values, HyperRole::ScalarMeta).unwrap()
    }

    /// `d l_V / d theta`.
    pub fn val_grad(&self, t: [f64; 3]) -> [f64; 3] {
        [
            2.0 * (t[0] - self.c[0]) + t[1],
            2.0 * (t[1] - self.c[1]) + t[0],
            2.0 * (t[2] - self.c[2]),
        ]
    }

    /// `v^T d^2 l_T / d theta d lambda`, from the hand-derived mixed partials.
    pub fn mixed_vjp(&self, t: [f64; 3], l: [f64; 2], v: [f64; 3]) -> [f64; 2] {
        let d_l0 = [2.0 * t[0], 0.0, 3.0 * l[1] * t[2] * t[2]];
        let d_l1 = [t[1], t[0] + 4.0 * l[1] * t[1], 3.0 * l[0] * t[2] * t[2]];
        let dot = |row: [f64; 3]| row.iter().zip(&v).map(|(a, b)| a * b).sum();
        [dot(d_l0), dot(d_l1)]
    }
}

fn prod(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.mul(acc, v)?;
    }
    Ok(acc)
}

impl Bilevel for Poly {
    type Batch = ();

    fn train_loss(&self, tape: &mut Tape, t: &[Var], l: &[Var], _: &()) -> Result<Var> {
        let terms = [
            prod(tape, &[l[0], t[0], t[0]])?,
            prod(tape, &[l[1], t[0], t[1]])?,
            prod(tape, &[l[0], l[1], t[2], t[2], t[2]])?,
            prod(tape, &[l[1], l[1], t[1], t[1]])?,
            prod(tape, &[t[0], t[1], t[2]])?,
        ];
        let s = tape.stack(&terms)?;
        tape.sum(s)
    }

    fn val_loss(&self, tape: &mut Tape, t: &[Var], _: &[Var], _: &()) -> Result<Var> {
        let mut terms = Vec::new();
        for i in 0..3 {
            let c = tape.constant(Tensor::scalar(self.c[i]));
            let d = tape.sub(t[i], c)?;
            terms.push(tape.mul(d, d)?);
        }
        terms.push(tape.mul(t[0], t[1])?);
        let s = tape.stack(&terms)?;
        tape.sum(s)
    }
}

/// A small reweighting problem: a one-hidden-layer classifier and a
/// one-hidden-layer weight network, on random data.
pub struct ReweightCase {
    pub problem: ReweightProblem,
    pub theta: ParamVector,
    pub hyper: HyperParams,
    pub train: LabeledSet,
    pub val: LabeledSet,
}

pub fn reweight_case(seed: u64) -> ReweightCase {
    let (dim, classes, n) = (6, 3, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = ReweightProblem::new(dim, &[10], classes, 8, Weighting::Net);
    let theta = problem.classifier.init(&mut rng);
    let hyper = HyperParams::new(problem.weight_net.init(&mut rng), HyperRole::NetworkMeta).unwrap();
    let set = |rng: &mut ChaCha8Rng| {
        let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        LabeledSet::new(Tensor::matrix(n, dim, x).unwrap(), labels).unwrap()
    };
    let train = set(&mut rng);
    let val = set(&mut rng);
    ReweightCase {
        problem,
        theta,
        hyper,
        train,
        val,
    }
}

/// Relative L2 disagreement between the single-tape and factorized
/// estimates on [`reweight_case`], with the same population.
pub fn identity_gap(seed: u64, pert: &PerturbationConfig) -> (f64, f64) {
    let c = reweight_case(seed);
    let mut r1 = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let a = evograd_hypergrad(&c.problem, &c.theta, &c.hyper, &c.train, &c.val, pert, &mut r1).unwrap();
    let b = factorized_hypergrad(&c.problem, &c.theta, &c.hyper, &c.train, &c.val, pert, &mut r2).unwrap();
    let diff: f64 = a.grad.data().iter().zip(b.grad.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.grad.norm();
    (diff / norm, norm)
}

/// The estimator defaults: sign noise, sigma 0.001, tau 0.05, K = 2.
pub fn identity_perturbation() -> PerturbationConfig {
    PerturbationConfig::default()
}
