//! Named, segmented parameter vectors for models and hyperparameters.

use crate::error::{shape_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A model's trainable parameters as named segments, viewable as one flat
/// vector of `total_dim` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    segments: Vec<(String, Tensor)>,
}

impl ParamVector {
    pub fn new(segments: Vec<(String, Tensor)>) -> Self {
        Self { segments }
    }

    pub fn single(name: &str, value: Tensor) -> Self {
        Self::new(vec![(name.to_string(), value)])
    }

    pub fn segments(&self) -> &[(String, Tensor)] {
        &self.segments
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.segments.iter().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.segments.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn total_dim(&self) -> usize {
        self.segments.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_dim());
        for (_, t) in &self.segments {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a vector with this one's segment structure from flat values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_dim() {
            return Err(shape_err(
                "unflatten",
                format!("{} values for {} parameters", flat.len(), self.total_dim()),
            ));
        }
        let mut offset = 0;
        let mut segments = Vec::with_capacity(self.segments.len());
        for (name, t) in &self.segments {
            let n = t.len();
            segments.push((
                name.clone(),
                Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            ));
            offset += n;
        }
        Ok(Self { segments })
    }

    pub fn same_structure(&self, other: &ParamVector) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Applies `f` segment by segment to `self` and `other`.
    pub fn zip_with(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_structure(other) {
            return Err(shape_err("param_vector", "segment structures differ"));
        }
        Ok(Self {
            segments: self
                .segments
                .iter()
                .zip(&other.segments)
                .map(|((n, a), (_, b))| (n.clone(), a.zip_map(b, &f)))
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        if !self.same_structure(other) {
            return Err(shape_err("param_vector", "segment structures differ"));
        }
        for ((_, a), (_, b)) in self.segments.iter_mut().zip(&other.segments) {
            a.axpy(alpha, b);
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.tensors().zip(other.tensors()).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Registers every segment on `tape`, as differentiable leaves when
    /// `differentiable` is set and as constants otherwise.
    pub fn register(&self, tape: &mut Tape, differentiable: bool) -> Vec<Var> {
        self.tensors()
            .map(|t| {
                if differentiable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperRole {
    /// A handful of scalars such as a rotation angle or a regularizer weight.
    ScalarMeta,
    /// The weights of an auxiliary network.
    NetworkMeta,
}

/// Meta-learned quantities. Flattened, they form a vector of dimension `N >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub values: ParamVector,
    pub role: HyperRole,
}

impl HyperParams {
    pub fn new(values: ParamVector, role: HyperRole) -> Result<Self> {
        if values.total_dim() == 0 {
            return Err(Error::InvalidInput {
                op: "hyperparams",
                detail: "dimension must be at least 1".into(),
            });
        }
        Ok(Self { values, role })
    }

    pub fn scalar(name: &str, value: f64) -> Self {
        Self {
            values: ParamVector::single(name, Tensor::scalar(value)),
            role: HyperRole::ScalarMeta,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.total_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ParamVector {
        ParamVector::new(vec![
            ("w".into(), Tensor::matrix(2, 3, (0..6).map(f64::from).collect()).unwrap()),
            ("b".into(), Tensor::vector(vec![-1.0, 2.5])),
            ("s".into(), Tensor::scalar(7.0)),
        ])
    }

    #[test]
    fn total_dim_is_segment_sum() {
        assert_eq!(sample().total_dim(), 9);
        assert_eq!(sample().flatten().len(), 9);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        assert!(sample().unflatten(&[0.0; 8]).is_err());
    }

    #[test]
    fn empty_hyperparams_rejected() {
        assert!(HyperParams::new(ParamVector::new(vec![]), HyperRole::ScalarMeta).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trips(values in proptest::collection::vec(-1e6f64..1e6, 9)) {
            let p = sample().unflatten(&values).unwrap();
            prop_assert_eq!(p.flatten(), values.clone());
            prop_assert!(p.same_structure(&sample()));
            prop_assert_eq!(p.unflatten(&p.flatten()).unwrap(), p);
        }
    }
}
