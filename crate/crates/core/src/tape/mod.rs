//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only list of nodes. Inputs enter as differentiable
//! leaves ([`Tape::leaf`]) or as constants ([`Tape::constant`]); every operator
//! call appends one node whose parents all precede it, so the node list is
//! already in topological order and [`Tape::backward`] is a single reverse
//! sweep.
//!
//! # Operator contracts
//!
//! | op              | inputs                                   | output        |
//! |-----------------|------------------------------------------|---------------|
//! | `add`, `sub`    | `a`, `b` of identical shape              | same shape    |
//! | `mul`           | identical shapes, or one operand with one element | the other shape |
//! | `scalar_mul`    | any tensor and an `f64` constant         | same shape    |
//! | `matmul`        | `[m,k]`, `[k,n]`                          | `[m,n]`       |
//! | `transpose`     | `[m,n]`                                   | `[n,m]`       |
//! | `reshape`       | any, same element count                   | requested     |
//! | `relu`, `sigmoid` | any                                     | same shape    |
//! | `softmax`, `log_softmax` | `[c]` or `[b,c]` (row-wise)        | same shape    |
//! | `cross_entropy` | logits `[c]` or `[b,c]`, one class index per row | `[b]` per-row losses |
//! | `mse`           | `a`, `b` of identical shape               | scalar mean of `(a-b)^2` |
//! | `sum`, `mean`   | any non-empty tensor                      | scalar        |
//! | `stack`         | `n` one-element tensors                   | `[n]`         |
//! | `affine_combine`| weights `[k]`, then `k` tensors of one shape | that shape |
//! | `offset_combine`| base, weights `[k]`, then `k` tensors of the base's shape | `base + sum_k w_k t_k` |
//! | `rotate2d`      | points `[n,2]`, one-element angle (radians) | `[n,2]`     |
//!
//! Broadcasting exists only for the one-element operand of `mul`.
//!
//! # Accounting
//!
//! [`Tape::stats`] counts operator nodes (leaves and constants are inputs,
//! not recorded operations) and the bytes of their forward values that a
//! reverse sweep would have to keep: 8 bytes per element of every operator
//! node that depends on at least one differentiable leaf. Values computed
//! purely from constants are not counted, and gradient buffers never are.

mod backward;
mod ops;

pub(crate) use ops::softmax_rows;

use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Matmul,
    Transpose,
    Reshape(Vec<usize>),
    Relu,
    Sigmoid,
    Softmax,
    LogSoftmax,
    CrossEntropy(Vec<usize>),
    Mse,
    Sum,
    Mean,
    Stack,
    AffineCombine,
    OffsetCombine,
    Rotate2d,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::ScalarMul(_) => "scalar_mul",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::CrossEntropy(_) => "cross_entropy",
            Op::Mse => "mse",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::Stack => "stack",
            Op::AffineCombine => "affine_combine",
            Op::OffsetCombine => "offset_combine",
            Op::Rotate2d => "rotate2d",
        }
    }

    /// Leaves and constants are tape inputs rather than recorded operations.
    pub fn is_input(&self) -> bool {
        matches!(self, Op::Leaf | Op::Constant)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub parents: Vec<usize>,
    pub value: Tensor,
    /// Whether the value depends on a differentiable leaf.
    pub tracked: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TapeStats {
    pub node_count: usize,
    pub stored_bytes: usize,
}

impl TapeStats {
    /// Elementwise maximum, for tracking the peak across several tapes.
    pub fn max(self, other: TapeStats) -> TapeStats {
        TapeStats {
            node_count: self.node_count.max(other.node_count),
            stored_bytes: self.stored_bytes.max(other.stored_bytes),
        }
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    stats: TapeStats,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            nodes: Vec::new(),
            stats: TapeStats::default(),
        }
    }

    /// Ends the current recording scope. Vars from before the reset are
    /// rejected afterwards.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.stats = TapeStats::default();
    }

    pub fn stats(&self) -> TapeStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, Vec::new(), value, true)
    }

    /// A non-differentiable input: data, targets, or detached parameters.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, Vec::new(), value, false)
    }

    /// Re-enters the value of `var` as a constant, cutting gradient flow.
    pub fn detach(&mut self, var: Var) -> Result<Var> {
        let value = self.value(var)?.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        self.check(var, "value")?;
        Ok(&self.nodes[var.id].value)
    }

    pub fn shape(&self, var: Var) -> Result<&[usize]> {
        Ok(self.value(var)?.shape())
    }

    pub fn is_tracked(&self, var: Var) -> Result<bool> {
        self.check(var, "is_tracked")?;
        Ok(self.nodes[var.id].tracked)
    }

    /// Appends an operator node after validating the operator's shape contract.
    pub fn record(&mut self, op: Op, inputs: &[Var], value: Tensor) -> Result<Var> {
        let name = op.name();
        if op.is_input() {
            return Err(Error::InvalidInput {
                op: name,
                detail: "inputs are created with leaf() or constant()".into(),
            });
        }
        for v in inputs {
            self.check(*v, name)?;
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.nodes[v.id].value.shape()).collect();
        let expected = infer_shape(&op, &shapes, inputs.iter().map(|v| &self.nodes[v.id].value))?;
        if expected != value.shape() {
            return Err(shape_err(
                name,
                format!("value has shape {:?}, contract gives {:?}", value.shape(), expected),
            ));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.id].tracked);
        let parents = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(op, parents, value, tracked))
    }

    fn push(&mut self, op: Op, parents: Vec<usize>, value: Tensor, tracked: bool) -> Var {
        if !op.is_input() {
            self.stats.node_count += 1;
            if tracked {
                self.stats.stored_bytes += value.len() * std::mem::size_of::<f64>();
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            parents,
            value,
            tracked,
        });
        Var { id, tape: self.id }
    }

    fn check(&self, var: Var, op: &'static str) -> Result<()> {
        if var.tape != self.id || var.id >= self.nodes.len() {
            return Err(Error::ForeignVar(op));
        }
        Ok(())
    }

    /// True if `var` is an ancestor of (or equal to) `root`.
    pub fn depends_on(&self, root: Var, var: Var) -> Result<bool> {
        self.check(root, "depends_on")?;
        self.check(var, "depends_on")?;
        if var.id > root.id {
            return Ok(false);
        }
        let mut reach = vec![false; root.id + 1];
        reach[root.id] = true;
        for i in (var.id..=root.id).rev() {
            if reach[i] {
                if i == var.id {
                    return Ok(true);
                }
                for &p in &self.nodes[i].parents {
                    reach[p] = true;
                }
            }
        }
        Ok(false)
    }

    /// Writes one line per node: `id op parent-ids shape`.
    pub fn dump(&self, mut out: impl Write) -> std::io::Result<()> {
        for (id, node) in self.nodes.iter().enumerate() {
            let parents = if node.parents.is_empty() {
                "-".to_string()
            } else {
                node.parents
                    .iter()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let shape = if node.value.shape().is_empty() {
                "scalar".to_string()
            } else {
                node.value
                    .shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join("x")
            };
            writeln!(out, "{id} {} {parents} {shape}", node.op)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Output shape implied by an operator's contract, or a diagnostic naming it.
fn infer_shape<'a>(
    op: &Op,
    shapes: &[&[usize]],
    mut values: impl Iterator<Item = &'a Tensor>,
) -> Result<Vec<usize>> {
    let name = op.name();
    let arity = |n: usize| -> Result<()> {
        if shapes.len() != n {
            Err(shape_err(name, format!("expected {n} inputs, got {}", shapes.len())))
        } else {
            Ok(())
        }
    };
    match op {
        Op::Leaf | Op::Constant => unreachable!("inputs are not recorded through infer_shape"),
        Op::Add | Op::Sub | Op::Mse => {
            arity(2)?;
            if shapes[0] != shapes[1] {
                return Err(shape_err(name, format!("{:?} vs {:?}", shapes[0], shapes[1])));
            }
            Ok(if matches!(op, Op::Mse) {
                if numel(shapes[0]) == 0 {
                    return Err(shape_err(name, "empty input"));
                }
                Vec::new()
            } else {
                shapes[0].to_vec()
            })
        }
        Op::Mul => {
            arity(2)?;
            let (a, b) = (shapes[0], shapes[1]);
            if a == b {
                Ok(a.to_vec())
            } else if numel(a) == 1 {
                Ok(b.to_vec())
            } else if numel(b) == 1 {
                Ok(a.to_vec())
            } else {
                Err(shape_err(name, format!("{a:?} vs {b:?}; only one-element operands broadcast")))
            }
        }
        Op::ScalarMul(_) | Op::Relu | Op::Sigmoid => {
            arity(1)?;
            Ok(shapes[0].to_vec())
        }
        Op::Matmul => {
            arity(2)?;
            match (shapes[0], shapes[1]) {
                ([m, k], [k2, n]) if k == k2 => Ok(vec![*m, *n]),
                (a, b) => Err(shape_err(name, format!("{a:?} x {b:?}"))),
            }
        }
        Op::Transpose => {
            arity(1)?;
            match shapes[0] {
                [m, n] => Ok(vec![*n, *m]),
                s => Err(shape_err(name, format!("needs rank 2, got {s:?}"))),
            }
        }
        Op::Reshape(target) => {
            arity(1)?;
            if numel(target) != numel(shapes[0]) {
                return Err(shape_err(name, format!("{:?} -> {target:?}", shapes[0])));
            }
            Ok(target.clone())
        }
        Op::Softmax | Op::LogSoftmax => {
            arity(1)?;
            match shapes[0] {
                [c] | [_, c] if *c > 0 => Ok(shapes[0].to_vec()),
                s => Err(shape_err(name, format!("needs [c] or [b,c] with c > 0, got {s:?}"))),
            }
        }
        Op::CrossEntropy(targets) => {
            arity(1)?;
            let (rows, classes) = match shapes[0] {
                [c] => (1, *c),
                [b, c] => (*b, *c),
                s => return Err(shape_err(name, format!("logits must be [c] or [b,c], got {s:?}"))),
            };
            if targets.len() != rows {
                return Err(shape_err(name, format!("{rows} rows but {} targets", targets.len())));
            }
            if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
                return Err(Error::InvalidInput {
                    op: name,
                    detail: format!("target class {t} out of range for {classes} classes"),
                });
            }
            Ok(vec![rows])
        }
        Op::Sum | Op::Mean => {
            arity(1)?;
            if numel(shapes[0]) == 0 {
                return Err(shape_err(name, "empty input"));
            }
            Ok(Vec::new())
        }
        Op::Stack => {
            if shapes.is_empty() {
                return Err(shape_err(name, "needs at least one input"));
            }
            if let Some(s) = shapes.iter().find(|s| numel(s) != 1) {
                return Err(shape_err(name, format!("inputs must hold one element, got {s:?}")));
            }
            Ok(vec![shapes.len()])
        }
        Op::AffineCombine => {
            if shapes.len() < 2 {
                return Err(shape_err(name, "needs weights and at least one tensor"));
            }
            let k = shapes.len() - 1;
            if shapes[0] != [k] {
                return Err(shape_err(name, format!("weights {:?} for {k} tensors", shapes[0])));
            }
            let first = shapes[1];
            if let Some(s) = shapes[2..].iter().find(|s| **s != first) {
                return Err(shape_err(name, format!("{first:?} vs {s:?}")));
            }
            Ok(first.to_vec())
        }
        Op::OffsetCombine => {
            if shapes.len() < 3 {
                return Err(shape_err(name, "needs weights, a base and at least one tensor"));
            }
            let k = shapes.len() - 2;
            if shapes[0] != [k] {
                return Err(shape_err(name, format!("weights {:?} for {k} tensors", shapes[0])));
            }
            let base = shapes[1];
            if let Some(s) = shapes[2..].iter().find(|s| **s != base) {
                return Err(shape_err(name, format!("{base:?} vs {s:?}")));
            }
            Ok(base.to_vec())
        }
        Op::Rotate2d => {
            arity(2)?;
            match shapes[0] {
                [_, 2] => {}
                s => return Err(shape_err(name, format!("points must be [n,2], got {s:?}"))),
            }
            let angle = values.nth(1).expect("arity checked");
            if angle.len() != 1 {
                return Err(shape_err(name, format!("angle must hold one element, got {:?}", shapes[1])));
            }
            Ok(shapes[0].to_vec())
        }
    }
}

#[cfg(test)]
mod tests;
