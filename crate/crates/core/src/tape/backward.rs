use super::ops::softmax_rows;
use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_raw, matmul_tn_raw, transpose_raw, Tensor};

impl Tape {
    /// Gradients of the one-element `root` with respect to each of `wrt`.
    ///
    /// Vars with no differentiable path to `root` get zeros. The tape is not
    /// modified.
    pub fn backward(&self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        self.check(root, "backward")?;
        for v in wrt {
            self.check(*v, "backward")?;
        }
        let root_value = &self.nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }

        let mut out: Vec<Tensor> = wrt
            .iter()
            .map(|v| Tensor::zeros(self.nodes[v.id].value.shape()))
            .collect();
        if !self.nodes[root.id].tracked {
            return Ok(out);
        }
        let lowest = wrt.iter().map(|v| v.id).min().unwrap_or(root.id);

        let mut adjoint: Vec<Option<Tensor>> = vec![None; root.id + 1];
        adjoint[root.id] = Some(Tensor::ones(root_value.shape()));

        for i in (lowest..=root.id).rev() {
            let Some(g) = adjoint[i].take() else { continue };
            for (slot, v) in out.iter_mut().zip(wrt) {
                if v.id == i {
                    *slot = g.clone();
                }
            }
            let node = &self.nodes[i];
            if node.op.is_input() {
                continue;
            }
            let need: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].tracked).collect();
            let grads = self.vjp(i, &g, &need);
            for (&p, grad) in node.parents.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                match &mut adjoint[p] {
                    Some(acc) => acc.axpy(1.0, &grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `i`, for the parents marked in `need`.
    fn vjp(&self, i: usize, g: &Tensor, need: &[bool]) -> Vec<Option<Tensor>> {
        let node = &self.nodes[i];
        let parent = |j: usize| &self.nodes[node.parents[j]].value;
        let when = |j: usize, f: &dyn Fn() -> Tensor| need[j].then(f);
        let y = &node.value;
        let all = |grads: Vec<Tensor>| grads.into_iter().map(Some).collect();
        match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add => vec![when(0, &|| g.clone()), when(1, &|| g.clone())],
            Op::Sub => vec![when(0, &|| g.clone()), when(1, &|| g.map(|x| -x))],
            Op::Mul => {
                let (a, b) = (parent(0), parent(1));
                vec![when(0, &|| mul_operand_grad(g, a, b)), when(1, &|| mul_operand_grad(g, b, a))]
            }
            Op::ScalarMul(c) => vec![Some(g.map(|x| c * x))],
            Op::Matmul => {
                let (a, b) = (parent(0), parent(1));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                vec![
                    when(0, &|| Tensor::new(vec![m, k], matmul_nt_raw(g.data(), b.data(), m, n, k)).expect("shape")),
                    when(1, &|| Tensor::new(vec![k, n], matmul_tn_raw(a.data(), g.data(), m, k, n)).expect("shape")),
                ]
            }
            Op::Transpose => {
                let (n, m) = (y.shape()[0], y.shape()[1]);
                vec![Some(Tensor::new(vec![m, n], transpose_raw(g.data(), n, m)).expect("shape"))]
            }
            Op::Reshape(_) => vec![Some(g.reshape(parent(0).shape()).expect("shape"))],
            Op::Relu => vec![Some(g.zip_map(parent(0), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid => vec![Some(g.zip_map(y, |gv, s| gv * s * (1.0 - s)))],
            Op::Softmax => {
                let cols = *y.shape().last().expect("rank checked");
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(s, gv)| s * (gv - dot)));
                }
                vec![Some(Tensor::new(y.shape().to_vec(), dx).expect("shape"))]
            }
            Op::LogSoftmax => {
                let cols = *y.shape().last().expect("rank checked");
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(cols).zip(g.data().chunks(cols)) {
                    let total: f64 = gr.iter().sum();
                    dx.extend(yr.iter().zip(gr).map(|(ly, gv)| gv - ly.exp() * total));
                }
                vec![Some(Tensor::new(y.shape().to_vec(), dx).expect("shape"))]
            }
            Op::CrossEntropy(targets) => {
                let x = parent(0);
                let cols = *x.shape().last().expect("rank checked");
                let mut dx = softmax_rows(x.data(), cols);
                for (r, &t) in targets.iter().enumerate() {
                    dx[r * cols + t] -= 1.0;
                    let gr = g.data()[r];
                    for v in &mut dx[r * cols..(r + 1) * cols] {
                        *v *= gr;
                    }
                }
                vec![Some(Tensor::new(x.shape().to_vec(), dx).expect("shape"))]
            }
            Op::Mse => {
                let (a, b) = (parent(0), parent(1));
                let scale = 2.0 * g.item() / a.len() as f64;
                let da = a.zip_map(b, |p, q| scale * (p - q));
                let db = need[1].then(|| da.map(|v| -v));
                vec![need[0].then_some(da), db]
            }
            Op::Sum => vec![Some(Tensor::full(parent(0).shape(), g.item()))],
            Op::Mean => {
                let x = parent(0);
                vec![Some(Tensor::full(x.shape(), g.item() / x.len() as f64))]
            }
            Op::Stack => (0..node.parents.len())
                .map(|j| when(j, &|| Tensor::full(parent(j).shape(), g.data()[j])))
                .collect(),
            Op::AffineCombine => {
                let w = parent(0);
                let k = w.len();
                let mut grads = Vec::with_capacity(k + 1);
                grads.push(when(0, &|| Tensor::vector((1..=k).map(|j| g.dot(parent(j))).collect())));
                grads.extend(w.data().iter().enumerate().map(|(j, &wk)| when(j + 1, &|| g.map(|v| wk * v))));
                grads
            }
            Op::OffsetCombine => {
                let w = parent(0);
                let k = w.len();
                let mut grads = Vec::with_capacity(k + 2);
                grads.push(when(0, &|| Tensor::vector((2..k + 2).map(|j| g.dot(parent(j))).collect())));
                grads.push(when(1, &|| g.clone()));
                grads.extend(w.data().iter().enumerate().map(|(j, &wk)| when(j + 2, &|| g.map(|v| wk * v))));
                grads
            }
            Op::Rotate2d => {
                let (p, a) = (parent(0), parent(1));
                let (s, c) = a.data()[0].sin_cos();
                let mut dp = Vec::with_capacity(p.len());
                let mut da = 0.0;
                for (xy, gg) in p.data().chunks(2).zip(g.data().chunks(2)) {
                    let (x, yv) = (xy[0], xy[1]);
                    let (gx, gy) = (gg[0], gg[1]);
                    dp.push(c * gx + s * gy);
                    dp.push(-s * gx + c * gy);
                    da += gx * (-s * x - c * yv) + gy * (c * x - s * yv);
                }
                all(vec![
                    Tensor::new(p.shape().to_vec(), dp).expect("shape"),
                    Tensor::full(a.shape(), da),
                ])
            }
        }
    }
}

/// Gradient of `g . (x * other)` with respect to `x`, honoring the
/// one-element broadcast of `mul`.
fn mul_operand_grad(g: &Tensor, x: &Tensor, other: &Tensor) -> Tensor {
    let prod = if other.shape() == g.shape() {
        g.zip_map(other, |a, b| a * b)
    } else {
        let s = other.data()[0];
        g.map(|a| a * s)
    };
    if x.shape() == g.shape() {
        prod
    } else {
        Tensor::full(x.shape(), prod.sum())
    }
}
