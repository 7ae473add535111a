//! The problem interface shared by every hypergradient estimator.

use crate::error::Result;
use crate::params::{HyperParams, ParamVector};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A bilevel problem: a training loss that depends on model parameters and
/// hyperparameters, and a validation loss evaluated at model parameters.
///
/// Both losses receive one var per parameter segment, in segment order, and
/// must return a one-element var. Implementations must not take gradients
/// themselves.
pub trait Bilevel {
    type Batch;

    fn train_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &Self::Batch) -> Result<Var>;

    /// Hyperparameter vars are passed so that a direct dependence can be
    /// expressed; the included problems ignore them.
    fn val_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &Self::Batch) -> Result<Var>;

    /// Records the parameter gradient of the training loss as ordinary
    /// forward operations, one var per segment. Problems that can spell
    /// their gradient out support the unrolled T1-T2 graph; others return
    /// `None`.
    fn train_grad_graph(
        &self,
        _tape: &mut Tape,
        _theta: &[Var],
        _hyper: &[Var],
        _batch: &Self::Batch,
    ) -> Option<Result<Vec<Var>>> {
        None
    }

    /// Closed-form hypergradient, where one exists.
    fn oracle_hypergrad(&self, _theta: &ParamVector, _hyper: &HyperParams) -> Option<Result<Tensor>> {
        None
    }
}
