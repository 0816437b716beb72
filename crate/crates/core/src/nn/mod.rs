//! Model representation, differentiation, losses and optimizers.

pub mod grad;
pub mod loss;
pub mod model;
pub mod optim;

pub use grad::{batch_loss, grad_input, grad_params};
pub use loss::{argmax, log_softmax, loss_ce, loss_margin, softmax, LossKind, Target, Targets};
pub use model::{Activation, Arch, Model};
pub use optim::{Adam, Optimizer, Sgd};

use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// A mini-batch. Source batches carry labels, target batches never do.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub inputs: Matrix<S>,
    labels: Option<Vec<usize>>,
    pub domain: Domain,
}

impl<S: Scalar> Batch<S> {
    pub fn source(inputs: Matrix<S>, labels: Vec<usize>) -> Result<Self> {
        check_dim("source batch labels", inputs.rows(), labels.len())?;
        Ok(Self {
            inputs,
            labels: Some(labels),
            domain: Domain::Source,
        })
    }

    pub fn target(inputs: Matrix<S>) -> Self {
        Self {
            inputs,
            labels: None,
            domain: Domain::Target,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Validation("batch is unlabeled".into()))
    }
}
