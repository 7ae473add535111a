use super::*;
use crate::problems::one_d::OneDProblem;
use crate::tape::Var;

fn t1t2(lambda: f64, x: f64, inner_lr: f64) -> Estimate {
    let cfg = T1T2Config {
        inner_lr,
        ..T1T2Config::default()
    };
    t1t2_hypergrad(&OneDProblem, &OneDProblem::theta(x), &OneDProblem::lambda(lambda), &(), &(), &cfg).unwrap()
}

#[test]
fn oracle_closed_form_values() {
    assert_eq!(oracle_hypergrad_1d(1.0).unwrap(), 0.0);
    assert_eq!(oracle_hypergrad_1d(0.0).unwrap(), -1.0);
    assert_eq!(oracle_hypergrad_1d(3.0).unwrap(), 0.03125);
    assert!(oracle_hypergrad_1d(-1.0).is_err());
    assert!(oracle_hypergrad_1d(f64::NAN).is_err());
}

#[test]
fn oracle_matches_derivative_of_optimal_validation_loss() {
    let f = |l: f64| OneDProblem::val_value(1.0 / (1.0 + l));
    let h = 1e-6;
    for l in [0.1, 0.5, 1.0, 2.5] {
        let fd = (f(l + h) - f(l - h)) / (2.0 * h);
        assert!((oracle_hypergrad_1d(l).unwrap() - fd).abs() < 1e-8);
    }
}

#[test]
fn one_step_matches_hand_derivation() {
    // l_V' = 2(x - 0.5); d^2 l_T / dx dlambda = 2x; no direct term
    for (lambda, x, eta) in [(0.5, 0.2, 0.1), (1.5, -0.7, 0.3), (0.0, 2.0, 1.0)] {
        let expected = -eta * 2.0 * (x - 0.5) * 2.0 * x;
        let got = t1t2(lambda, x, eta).grad.item();
        assert!((got - expected).abs() < 1e-8 * expected.abs().max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn newton_scaled_step_recovers_the_oracle_at_the_optimum() {
    for lambda in [0.25, 1.0, 2.0, 4.0] {
        let x = 1.0 / (1.0 + lambda);
        let eta = 1.0 / (2.0 * (1.0 + lambda));
        let got = t1t2(lambda, x, eta).grad.item();
        let oracle = oracle_hypergrad_1d(lambda).unwrap();
        assert!((got - oracle).abs() < 1e-9, "lambda {lambda}: {got} vs {oracle}");
    }
}

#[test]
fn zero_validation_gradient_returns_the_direct_term() {
    let est = t1t2(0.7, 0.5, 1.0);
    assert_eq!(est.grad.item(), 0.0);
    assert_eq!((est.cost.forwards, est.cost.backwards), (1, 1));
}

#[test]
fn non_positive_delta_is_rejected() {
    let cfg = T1T2Config {
        fd_delta: 0.0,
        inner_lr: 1.0,
    };
    let r = t1t2_hypergrad(&OneDProblem, &OneDProblem::theta(0.2), &OneDProblem::lambda(1.0), &(), &(), &cfg);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn unrolled_differentiates_through_the_fast_weights() {
    // d/dlambda l_V(x - eta (2(x - 1) + 2 lambda x)) = 2(x' - 0.5) * (-2 eta x)
    for (lambda, x, eta) in [(0.5, 0.2, 0.1), (1.5, -0.7, 0.3)] {
        let cfg = T1T2Config {
            inner_lr: eta,
            ..T1T2Config::default()
        };
        let fast = x - eta * (2.0 * (x - 1.0) + 2.0 * lambda * x);
        let expected = 2.0 * (fast - 0.5) * (-2.0 * eta * x);
        let est = unrolled_t1t2_hypergrad(&OneDProblem, &OneDProblem::theta(x), &OneDProblem::lambda(lambda), &(), &(), &cfg).unwrap();
        assert!((est.grad.item() - expected).abs() < 1e-12, "{} vs {expected}", est.grad.item());
        assert_eq!((est.cost.forwards, est.cost.backwards), (2, 1));
        assert!(est.tape.is_some());
    }
}

#[test]
fn pass_counts_of_the_difference_estimate() {
    let est = t1t2(0.5, 0.2, 0.1);
    assert_eq!((est.cost.forwards, est.cost.backwards), (3, 3));
    assert!(est.tape.is_none() && est.weights.is_none());
}

struct NoGradGraph;

impl Bilevel for NoGradGraph {
    type Batch = ();

    fn train_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], _: &()) -> Result<Var> {
        let p = tape.mul(theta[0], hyper[0])?;
        tape.mul(p, theta[0])
    }

    fn val_loss(&self, tape: &mut Tape, theta: &[Var], _: &[Var], _: &()) -> Result<Var> {
        tape.mul(theta[0], theta[0])
    }
}

#[test]
fn unrolled_needs_a_recorded_gradient() {
    let r = unrolled_t1t2_hypergrad(&NoGradGraph, &OneDProblem::theta(1.0), &OneDProblem::lambda(1.0), &(), &(), &T1T2Config::default());
    assert!(matches!(r, Err(Error::InvalidInput { op: "unrolled_t1t2", .. })));
    let fd = t1t2_hypergrad(&NoGradGraph, &OneDProblem::theta(1.0), &OneDProblem::lambda(1.0), &(), &(), &T1T2Config::default()).unwrap();
    // l_V' = 2x = 2, d^2 (lambda x^2) / dx dlambda = 2x = 2
    assert!((fd.grad.item() + 4.0).abs() < 1e-8);
}

#[test]
fn median_of_odd_and_even_counts() {
    assert_eq!(cost::median(&mut [3.0, 1.0, 2.0]), 2.0);
    assert_eq!(cost::median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    assert!(cost::median(&mut []).is_nan());
}
