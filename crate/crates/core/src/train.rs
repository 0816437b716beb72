//! Pieces shared by every training loop: batch sampling, epoch statistics and
//! the plain (optionally adversarial) supervised loop.

use crate::attacks::{pgd_batch, AttackBudget};
use crate::augment::{standard_aug, GridShape};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{grad_params, LossKind, Model, Optimizer, Sgd, Targets};
use crate::rng::{Rng, Rngs};
use crate::scalar::Scalar;

/// Per-epoch training summary handed to epoch hooks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the loop's primary objective over the epoch's steps.
    pub loss: f64,
    pub at_loss: Option<f64>,
    pub meta_loss: Option<f64>,
}

/// Called after every epoch with the trained model and, in teacher-student
/// loops, the teacher. Epoch 0 is reported before any update.
pub type EpochHook<'a, S> = dyn FnMut(&EpochStats, &Model<S>, Option<&Model<S>>) -> Result<()> + 'a;

/// A no-op hook.
pub fn no_hook<S: Scalar>(_: &EpochStats, _: &Model<S>, _: Option<&Model<S>>) -> Result<()> {
    Ok(())
}

/// Shuffled index batches covering `0..n` once.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Endless stream of shuffled batches; reshuffles on every pass.
#[derive(Debug, Clone)]
pub struct CyclicSampler {
    n: usize,
    batch: usize,
    order: Vec<usize>,
    pos: usize,
}

impl CyclicSampler {
    pub fn new(n: usize, batch: usize) -> Self {
        Self {
            n,
            batch: batch.max(1),
            order: Vec::new(),
            pos: 0,
        }
    }

    pub fn next_batch(&mut self, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch.min(self.n));
        while out.len() < self.batch.min(self.n) {
            if self.pos >= self.order.len() {
                self.order = (0..self.n).collect();
                rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

pub(crate) fn finite_or_diverged(epoch: usize, what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { epoch, what, value })
    }
}

pub(crate) fn finite_params<S: Scalar>(epoch: usize, model: &Model<S>) -> Result<()> {
    if let Some(bad) = model.params().iter().find(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            epoch,
            what: "parameter",
            value: bad.as_f64(),
        });
    }
    Ok(())
}

/// Applies flip/rotate augmentation row-wise when a grid shape is given.
pub(crate) fn augment_rows<S: Scalar>(m: &Matrix<S>, grid: Option<&GridShape>, rng: &mut Rng) -> Result<Matrix<S>> {
    match grid {
        None => Ok(m.clone()),
        Some(shape) => {
            let mut out = Matrix::empty(m.cols());
            for row in m.iter_rows() {
                out.push_row(&standard_aug(row, shape, rng)?)?;
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig<S> {
    pub epochs: usize,
    pub lr: S,
    pub momentum: S,
    pub batch_size: usize,
    /// Flip/rotate grid inputs before each step.
    pub standard_aug: Option<GridShape>,
}

/// Mini-batch gradient descent on source cross-entropy. With an attack budget
/// every batch is replaced by its PGD examples against the true labels first
/// (standard adversarial training).
pub fn train_supervised<S: Scalar>(
    model: &mut Model<S>,
    source: &LabeledSet<S>,
    cfg: &SupervisedConfig<S>,
    attack: Option<&AttackBudget<S>>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<()> {
    if source.is_empty() {
        return Err(Error::EmptyDataset("source"));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    hook(&EpochStats::default(), model, None)?;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(source.len(), cfg.batch_size, &mut rngs.source_batch);
        for idx in &batches {
            let batch = source.subset(idx);
            let mut xs = augment_rows(&batch.inputs, cfg.standard_aug.as_ref(), &mut rngs.augment)?;
            if let Some(budget) = attack {
                xs = pgd_batch(model, &xs, Targets::Hard(&batch.labels), budget, Some(&mut rngs.attack))?;
            }
            let (loss, grad) = grad_params(model, &xs, Targets::Hard(&batch.labels), LossKind::CrossEntropy)?;
            total += finite_or_diverged(epoch, "source loss", loss.as_f64())?;
            opt.step(model.params_mut(), &grad);
        }
        finite_params(epoch, model)?;
        let stats = EpochStats {
            epoch,
            loss: total / batches.len() as f64,
            ..Default::default()
        };
        hook(&stats, model, None)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn epoch_batches_cover_everything_once() {
        let mut rng = Rng::new(0, Stream::Batch);
        let b = epoch_batches(10, 3, &mut rng);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn cyclic_sampler_wraps() {
        let mut rng = Rng::new(0, Stream::Batch);
        let mut s = CyclicSampler::new(5, 4);
        let a = s.next_batch(&mut rng);
        let b = s.next_batch(&mut rng);
        assert_eq!(a.len(), 4);
        assert_eq!(b.len(), 4);
        let mut first_pass: Vec<usize> = a.iter().chain(&b[..1]).copied().collect();
        first_pass.sort_unstable();
        assert_eq!(first_pass, vec![0, 1, 2, 3, 4]);
    }
}
