//! Experiment definitions.
//!
//! - [`one_d`]: `f_T(x, lambda) = (x-1)^2 + lambda x^2`, `f_V(x) = (x-0.5)^2`.
//! - [`rotation`]: learn the angle that aligns canonical training glyphs
//!   with a rotated validation/test distribution.
//! - [`reweight`]: learn a per-instance loss weighting network under
//!   uniform label noise, with a clean validation set.
//!
//! Data is synthetic and a pure function of its parameters and seed.

pub mod mlp;
pub mod one_d;
pub mod reweight;
pub mod rotation;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{shape_err, Result};
use crate::metrics::format_value;
use crate::tensor::Tensor;

/// Row-major features `[n, d]` with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        match x.shape() {
            [n, _] if *n == labels.len() => Ok(Self { x, labels }),
            s => Err(shape_err("labeled_set", format!("features {s:?} for {} labels", labels.len()))),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.x.data()[i * d..(i + 1) * d]);
        }
        LabeledSet {
            x: Tensor::matrix(indices.len(), d, data).expect("shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// One row per instance: `f0,..,f{d-1},label,corrupted`.
    pub fn write_csv(&self, mut out: impl Write, corrupted: Option<&[bool]>) -> std::io::Result<()> {
        let d = self.dim();
        let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
        writeln!(out, "{},label,corrupted", header.join(","))?;
        for (i, row) in self.x.data().chunks(d).enumerate() {
            let feats: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
            let flag = corrupted.is_some_and(|c| c[i]);
            writeln!(out, "{},{},{}", feats.join(","), self.labels[i], u8::from(flag))?;
        }
        Ok(())
    }
}

/// Shuffled minibatch indices for one pass over `n` items. The last batch
/// may be short.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// `batch` distinct indices from `0..n` (all of them if `n <= batch`).
pub fn sample_indices(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n, batch.min(n)).into_vec()
}

/// The per-step record shared by the training experiments.
pub(crate) fn step_record(
    run_id: &str,
    seed: u64,
    step: u64,
    report: &crate::evograd::StepReport,
    lambda: Option<f64>,
    timing: bool,
) -> crate::metrics::MetricsRecord {
    crate::metrics::MetricsRecord {
        run_id: run_id.to_string(),
        seed,
        step,
        loss_train: Some(report.train_loss),
        loss_val: report.val_loss,
        accuracy: None,
        lambda,
        hypergrad_norm: lambda.map(|_| report.hypergrad.norm()),
        tape_nodes: report.cost.peak.node_count,
        stored_bytes: report.cost.peak.stored_bytes,
        forwards: report.cost.forwards,
        backwards: report.cost.backwards,
        wall_ms: timing.then(|| report.wall.as_secs_f64() * 1e3),
    }
}
