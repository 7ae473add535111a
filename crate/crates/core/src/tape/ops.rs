//! Forward operators. Each computes its value, then goes through
//! [`Tape::record`] so the shape contract is checked in one place.

use super::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

/// Row-wise softmax of a `[c]` or `[b,c]` slice, max-subtracted.
pub(crate) fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &x in row {
            let e = (x - max).exp();
            total += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&x| x - lse));
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

impl Tape {
    fn values<const N: usize>(&self, vars: [Var; N], op: &'static str) -> Result<[&Tensor; N]> {
        for v in vars {
            self.check(v, op)?;
        }
        Ok(vars.map(|v| &self.nodes[v.id].value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let [x, y] = self.values([a, b], "add")?;
        if x.shape() != y.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let value = x.zip_map(y, |p, q| p + q);
        self.record(Op::Add, &[a, b], value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let [x, y] = self.values([a, b], "sub")?;
        if x.shape() != y.shape() {
            return Err(shape_err("sub", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let value = x.zip_map(y, |p, q| p - q);
        self.record(Op::Sub, &[a, b], value)
    }

    /// Elementwise product; a one-element operand scales the other.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [x, y] = self.values([a, b], "mul")?;
        let value = if x.shape() == y.shape() {
            x.zip_map(y, |p, q| p * q)
        } else if x.len() == 1 {
            let s = x.data()[0];
            y.map(|q| s * q)
        } else if y.len() == 1 {
            let s = y.data()[0];
            x.map(|p| p * s)
        } else {
            return Err(shape_err("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        };
        self.record(Op::Mul, &[a, b], value)
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let [x] = self.values([a], "scalar_mul")?;
        let value = x.map(|p| c * p);
        self.record(Op::ScalarMul(c), &[a], value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [x, y] = self.values([a, b], "matmul")?;
        let (m, k, n) = match (x.shape(), y.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (p, q) => return Err(shape_err("matmul", format!("{p:?} x {q:?}"))),
        };
        let value = Tensor::new(vec![m, n], matmul_raw(x.data(), y.data(), m, k, n))?;
        self.record(Op::Matmul, &[a, b], value)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "transpose")?;
        let (m, n) = match x.shape() {
            [m, n] => (*m, *n),
            s => return Err(shape_err("transpose", format!("needs rank 2, got {s:?}"))),
        };
        let value = Tensor::new(vec![n, m], transpose_raw(x.data(), m, n))?;
        self.record(Op::Transpose, &[a], value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let [x] = self.values([a], "reshape")?;
        let value = x
            .reshape(shape)
            .map_err(|_| shape_err("reshape", format!("{:?} -> {shape:?}", x.shape())))?;
        self.record(Op::Reshape(shape.to_vec()), &[a], value)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "relu")?;
        let value = x.map(|p| p.max(0.0));
        self.record(Op::Relu, &[a], value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "sigmoid")?;
        let value = x.map(sigmoid);
        self.record(Op::Sigmoid, &[a], value)
    }

    /// Softmax over the last axis of a `[c]` or `[b,c]` tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "softmax")?;
        if x.as_rows().is_none() || x.is_empty() {
            return Err(shape_err("softmax", format!("needs [c] or [b,c], got {:?}", x.shape())));
        }
        let value = Tensor::new(x.shape().to_vec(), softmax_rows(x.data(), last_dim(x)))?;
        self.record(Op::Softmax, &[a], value)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "log_softmax")?;
        if x.as_rows().is_none() || x.is_empty() {
            return Err(shape_err("log_softmax", format!("needs [c] or [b,c], got {:?}", x.shape())));
        }
        let value = Tensor::new(x.shape().to_vec(), log_softmax_rows(x.data(), last_dim(x)))?;
        self.record(Op::LogSoftmax, &[a], value)
    }

    /// Per-row cross-entropy of `logits` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let [x] = self.values([logits], "cross_entropy")?;
        let Some((rows, cols)) = x.as_rows() else {
            return Err(shape_err("cross_entropy", format!("logits must be [c] or [b,c], got {:?}", x.shape())));
        };
        if targets.len() != rows || targets.iter().any(|&t| t >= cols) {
            // let the contract produce the precise diagnostic
            let op = Op::CrossEntropy(targets.to_vec());
            return self.record(op, &[logits], Tensor::zeros(&[rows]));
        }
        let logp = log_softmax_rows(x.data(), cols);
        let losses = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -logp[r * cols + t])
            .collect();
        self.record(Op::CrossEntropy(targets.to_vec()), &[logits], Tensor::vector(losses))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let [x, y] = self.values([a, b], "mse")?;
        if x.shape() != y.shape() || x.is_empty() {
            return Err(shape_err("mse", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let n = x.len() as f64;
        let total: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q) * (p - q)).sum();
        self.record(Op::Mse, &[a, b], Tensor::scalar(total / n))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "sum")?;
        let value = Tensor::scalar(x.sum());
        self.record(Op::Sum, &[a], value)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let [x] = self.values([a], "mean")?;
        if x.is_empty() {
            return Err(shape_err("mean", "empty input"));
        }
        let value = Tensor::scalar(x.sum() / x.len() as f64);
        self.record(Op::Mean, &[a], value)
    }

    /// Collects one-element tensors into a vector.
    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let mut data = Vec::with_capacity(items.len());
        for &v in items {
            let [x] = self.values([v], "stack")?;
            data.push(x.data().first().copied().unwrap_or(f64::NAN));
        }
        self.record(Op::Stack, items, Tensor::vector(data))
    }

    /// `sum_k weights[k] * tensors[k]`.
    pub fn affine_combine(&mut self, weights: Var, tensors: &[Var]) -> Result<Var> {
        let [w] = self.values([weights], "affine_combine")?;
        if w.shape() != [tensors.len()] || tensors.is_empty() {
            return Err(shape_err(
                "affine_combine",
                format!("weights {:?} for {} tensors", w.shape(), tensors.len()),
            ));
        }
        let w = w.data().to_vec();
        let [first] = self.values([tensors[0]], "affine_combine")?;
        let mut acc = Tensor::zeros(first.shape());
        for (&t, &wk) in tensors.iter().zip(&w) {
            let [x] = self.values([t], "affine_combine")?;
            if x.shape() != acc.shape() {
                return Err(shape_err("affine_combine", format!("{:?} vs {:?}", acc.shape(), x.shape())));
            }
            acc.axpy(wk, x);
        }
        let mut inputs = Vec::with_capacity(tensors.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(tensors);
        self.record(Op::AffineCombine, &inputs, acc)
    }

    /// `base + sum_k weights[k] * tensors[k]`.
    pub fn offset_combine(&mut self, base: Var, weights: Var, tensors: &[Var]) -> Result<Var> {
        let [w, b] = self.values([weights, base], "offset_combine")?;
        if w.shape() != [tensors.len()] || tensors.is_empty() {
            return Err(shape_err(
                "offset_combine",
                format!("weights {:?} for {} tensors", w.shape(), tensors.len()),
            ));
        }
        let w = w.data().to_vec();
        let mut acc = b.clone();
        for (&t, &wk) in tensors.iter().zip(&w) {
            let [x] = self.values([t], "offset_combine")?;
            if x.shape() != acc.shape() {
                return Err(shape_err("offset_combine", format!("{:?} vs {:?}", acc.shape(), x.shape())));
            }
            acc.axpy(wk, x);
        }
        let mut inputs = Vec::with_capacity(tensors.len() + 2);
        inputs.push(weights);
        inputs.push(base);
        inputs.extend_from_slice(tensors);
        self.record(Op::OffsetCombine, &inputs, acc)
    }

    /// Rotates each row `(x, y)` of `points` counter-clockwise by `angle` radians.
    pub fn rotate2d(&mut self, points: Var, angle: Var) -> Result<Var> {
        let [p, a] = self.values([points, angle], "rotate2d")?;
        if !matches!(p.shape(), [_, 2]) || a.len() != 1 {
            return Err(shape_err(
                "rotate2d",
                format!("points {:?}, angle {:?}", p.shape(), a.shape()),
            ));
        }
        let (s, c) = a.data()[0].sin_cos();
        let mut out = Vec::with_capacity(p.len());
        for xy in p.data().chunks(2) {
            out.push(c * xy[0] - s * xy[1]);
            out.push(s * xy[0] + c * xy[1]);
        }
        let value = Tensor::new(p.shape().to_vec(), out)?;
        self.record(Op::Rotate2d, &[points, angle], value)
    }
}
