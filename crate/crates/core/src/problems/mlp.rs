//! Fully connected ReLU networks on the tape.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::ParamVector;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Layer sizes `[inputs, hidden.., outputs]`. Segments are `w{l}` (`[n_l, n_{l+1}]`)
/// and `b{l}` (`[1, n_{l+1}]`) per layer; biases enter through a product with
/// a column of ones, so no broadcasting is needed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
}

/// Forward intermediates kept for an explicitly recorded backward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    pub logits: Var,
    /// Input to each layer.
    inputs: Vec<Var>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Var>,
}

/// How per-row losses are combined before differentiation.
#[derive(Clone, Copy, Debug)]
pub enum RowScale {
    /// Every row scaled by the same constant (`1/B` for a mean).
    Uniform(f64),
    /// Row `i` scaled by element `i` of a `[B]` var.
    PerRow(Var),
}

impl Mlp {
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "bad layer sizes {sizes:?}");
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init(&self, rng: &mut impl Rng) -> ParamVector {
        let mut segments = Vec::with_capacity(2 * self.layers());
        for (l, w) in self.sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
            let weight = Tensor::matrix(w[0], w[1], draw(w[0] * w[1])).expect("shape");
            let bias = Tensor::matrix(1, w[1], draw(w[1])).expect("shape");
            segments.push((format!("w{l}"), weight));
            segments.push((format!("b{l}"), bias));
        }
        ParamVector::new(segments)
    }

    fn check_params(&self, params: &[Var]) -> Result<()> {
        if params.len() != 2 * self.layers() {
            return Err(shape_err(
                "mlp",
                format!("{} parameter vars for {} layers", params.len(), self.layers()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        Ok(self.forward_cached(tape, params, x)?.logits)
    }

    pub fn forward_cached(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Activations> {
        self.check_params(params)?;
        let rows = match tape.shape(x)? {
            [b, d] if *d == self.sizes[0] => *b,
            s => return Err(shape_err("mlp", format!("input {s:?}, expected [b,{}]", self.sizes[0]))),
        };
        let ones = tape.constant(Tensor::ones(&[rows, 1]));
        let mut inputs = Vec::with_capacity(self.layers());
        let mut hidden_pre = Vec::with_capacity(self.layers() - 1);
        let mut a = x;
        for l in 0..self.layers() {
            inputs.push(a);
            let xw = tape.matmul(a, params[2 * l])?;
            let bias = tape.matmul(ones, params[2 * l + 1])?;
            let z = tape.add(xw, bias)?;
            if l + 1 < self.layers() {
                hidden_pre.push(z);
                a = tape.relu(z)?;
            } else {
                a = z;
            }
        }
        Ok(Activations {
            logits: a,
            inputs,
            hidden_pre,
        })
    }

    /// Records the parameter gradient of `sum_i s_i CE(logits_i, targets_i)`
    /// as forward operations, one var per segment. ReLU masks enter as
    /// constants since their derivative vanishes almost everywhere.
    pub fn record_ce_grad(
        &self,
        tape: &mut Tape,
        params: &[Var],
        acts: &Activations,
        targets: &[usize],
        scale: RowScale,
    ) -> Result<Vec<Var>> {
        self.check_params(params)?;
        let (rows, classes) = match tape.shape(acts.logits)? {
            [b, c] => (*b, *c),
            s => return Err(shape_err("mlp", format!("logits {s:?}"))),
        };
        if targets.len() != rows {
            return Err(shape_err("mlp", format!("{rows} rows, {} targets", targets.len())));
        }
        let mut onehot = Tensor::zeros(&[rows, classes]);
        for (r, &t) in targets.iter().enumerate() {
            onehot.data_mut()[r * classes + t] = 1.0;
        }
        let probs = tape.softmax(acts.logits)?;
        let onehot = tape.constant(onehot);
        let mut g = tape.sub(probs, onehot)?;
        g = match scale {
            RowScale::Uniform(c) => tape.scalar_mul(g, c)?,
            RowScale::PerRow(v) => {
                let col = tape.reshape(v, &[rows, 1])?;
                let ones = tape.constant(Tensor::ones(&[1, classes]));
                let spread = tape.matmul(col, ones)?;
                tape.mul(g, spread)?
            }
        };

        let ones_row = tape.constant(Tensor::ones(&[1, rows]));
        let mut grads = vec![None; params.len()];
        for l in (0..self.layers()).rev() {
            let at = tape.transpose(acts.inputs[l])?;
            grads[2 * l] = Some(tape.matmul(at, g)?);
            grads[2 * l + 1] = Some(tape.matmul(ones_row, g)?);
            if l > 0 {
                let wt = tape.transpose(params[2 * l])?;
                let back = tape.matmul(g, wt)?;
                let mask = tape.value(acts.hidden_pre[l - 1])?.map(|z| if z > 0.0 { 1.0 } else { 0.0 });
                let mask = tape.constant(mask);
                g = tape.mul(back, mask)?;
            }
        }
        Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
    }

    /// Logits for a batch, without recording anything differentiable.
    pub fn logits(&self, params: &ParamVector, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = params.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(out)?.clone())
    }

    pub fn predict(&self, params: &ParamVector, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(params, x)?;
        let classes = *self.sizes.last().expect("non-empty");
        Ok(logits
            .data()
            .chunks(classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, params: &ParamVector, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(params, x)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedStreams};

    #[test]
    fn recorded_gradient_matches_reverse_sweep() {
        let mlp = Mlp::new(vec![3, 5, 4, 3]);
        let streams = SeedStreams::new(11);
        let params = mlp.init(&mut streams.stream(Purpose::Init));
        let mut rng = streams.stream(Purpose::Data);
        let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let targets = [0, 2, 1, 1, 0, 2];
        let row_w: Vec<f64> = (0..6).map(|i| 0.1 + 0.15 * i as f64).collect();

        let mut tape = Tape::new();
        let p = params.register(&mut tape, true);
        let xv = tape.constant(x);
        let acts = mlp.forward_cached(&mut tape, &p, xv).unwrap();
        let ce = tape.cross_entropy(acts.logits, &targets).unwrap();
        let wv = tape.constant(Tensor::vector(row_w));
        let weighted = tape.mul(ce, wv).unwrap();
        let loss = tape.sum(weighted).unwrap();
        let auto = tape.backward(loss, &p).unwrap();
        let manual = mlp
            .record_ce_grad(&mut tape, &p, &acts, &targets, RowScale::PerRow(wv))
            .unwrap();
        for (a, m) in auto.iter().zip(&manual) {
            let m = tape.value(*m).unwrap();
            assert_eq!(a.shape(), m.shape());
            for (x, y) in a.data().iter().zip(m.data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }
}
