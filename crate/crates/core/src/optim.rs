//! First-order optimizers over flattened parameter vectors.

use crate::error::{shape_err, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One descent step along `grad` (flattened in segment order).
    pub fn step(&mut self, params: &mut ParamVector, grad: &[f64]) -> Result<()> {
        if grad.len() != params.total_dim() {
            return Err(shape_err(
                "optimizer",
                format!("{} gradient values for {} parameters", grad.len(), params.total_dim()),
            ));
        }
        let mut flat = params.flatten();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in flat.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != flat.len() {
                    self.m = vec![0.0; flat.len()];
                    self.v = vec![0.0; flat.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..flat.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    flat[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                }
            }
        }
        *params = params.unflatten(&flat)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sgd_step() {
        let mut p = ParamVector::single("x", Tensor::vector(vec![1.0, 2.0]));
        Optimizer::sgd(0.1).step(&mut p, &[1.0, -2.0]).unwrap();
        assert_eq!(p.flatten(), vec![0.9, 2.2]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = ParamVector::single("x", Tensor::vector(vec![0.0, 0.0]));
        let mut opt = Optimizer::adam(0.01);
        opt.step(&mut p, &[3.0, -1e-4]).unwrap();
        let f = p.flatten();
        assert!((f[0] + 0.01).abs() < 1e-9);
        assert!((f[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = ParamVector::single("x", Tensor::vector(vec![0.5]));
        let mut opt = Optimizer::adam(0.01);
        opt.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p.flatten(), vec![0.5]);
    }
}
