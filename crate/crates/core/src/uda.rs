//! Source-model pre-training with the margin disparity discrepancy (MDD).
//!
//! An auxiliary head on the shared features is trained to maximise
//! `CE(aux(f_t), main(f_t)) - gamma * CE(aux(f_s), main(f_s))` while the
//! feature extractor and main head minimise `CE(main(f_s), y_s) + eta * dd`.
//! The min-max is run as one ascent step on the auxiliary head followed by one
//! descent step on the model per mini-batch. The main head's predictions act
//! as constant targets (hard argmax by default).

use crate::augment::{coordinate_dropout, rma, GridShape, RmaConfig};
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::nn::loss::loss_and_dlogits;
use crate::nn::{argmax, grad_params, loss_ce, softmax, Arch, Batch, LossKind, Model, Optimizer, Sgd, Target, Targets};
use crate::rng::Rngs;
use crate::scalar::Scalar;
use crate::train::{
    augment_rows, epoch_batches, finite_or_diverged, finite_params, CyclicSampler, EpochHook, EpochStats,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MddConfig<S> {
    pub gamma: S,
    pub eta: S,
    pub epochs: usize,
    pub lr: S,
    pub momentum: S,
    pub batch_size: usize,
    /// Use the main head's softmax instead of its argmax as the dd target.
    pub soft_targets: bool,
    /// Masked augmentation of grid targets; `None` disables it.
    pub rma: Option<RmaConfig>,
    /// Coordinate-dropout copies of non-grid targets (uses the rma ratio).
    pub coordinate_dropout: bool,
    /// Flip/rotate grid inputs.
    pub standard_aug: bool,
}

impl<S: Scalar> Default for MddConfig<S> {
    fn default() -> Self {
        Self {
            gamma: S::lit(4.0),
            eta: S::lit(0.1),
            epochs: 20,
            lr: S::lit(0.004),
            momentum: S::zero(),
            batch_size: 32,
            soft_targets: false,
            rma: Some(RmaConfig::default()),
            coordinate_dropout: false,
            standard_aug: false,
        }
    }
}

impl<S: Scalar> MddConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= S::one()) {
            return Err(Error::Validation(format!("mdd gamma {} must be >= 1", self.gamma)));
        }
        if !(self.eta >= S::zero()) {
            return Err(Error::Validation(format!("mdd eta {} must be >= 0", self.eta)));
        }
        if !(self.lr >= S::zero()) || self.batch_size == 0 {
            return Err(Error::Validation("pretrain lr must be >= 0 and batch size >= 1".into()));
        }
        Ok(())
    }
}

/// Auxiliary head matching `model`'s feature width and class count.
pub fn aux_head_for<S: Scalar>(model: &Model<S>, rng: &mut crate::rng::Rng) -> Result<Model<S>> {
    Model::init(Arch::head(model.feature_dim(), model.classes()), rng)
}

fn check_heads<S: Scalar>(main: &Model<S>, aux: &Model<S>) -> Result<()> {
    check_dim("aux head input", main.feature_dim(), aux.arch().input_dim)?;
    check_dim("aux head classes", main.classes(), aux.classes())
}

fn features<S: Scalar>(model: &Model<S>, x: &Matrix<S>) -> Result<Matrix<S>> {
    let mut out = Matrix::empty(model.feature_dim());
    for row in x.iter_rows() {
        out.push_row(&model.forward_features(row)?)?;
    }
    Ok(out)
}

enum DdTarget<S> {
    Hard(usize),
    Soft(Vec<S>),
}

impl<S: Scalar> DdTarget<S> {
    fn of(main_logits: &[S], soft: bool) -> Self {
        if soft {
            DdTarget::Soft(softmax(main_logits))
        } else {
            DdTarget::Hard(argmax(main_logits))
        }
    }

    fn as_target(&self) -> Target<'_, S> {
        match self {
            DdTarget::Hard(y) => Target::Hard(*y),
            DdTarget::Soft(p) => Target::Soft(p),
        }
    }
}

fn mean_term<S: Scalar>(main: &Model<S>, aux: &Model<S>, feats: &Matrix<S>, soft: bool) -> Result<S> {
    if feats.is_empty() {
        return Ok(S::zero());
    }
    let mut total = S::zero();
    for f in feats.iter_rows() {
        let t = DdTarget::of(&main.head_logits(f)?, soft);
        total += loss_ce(&aux.forward_logits(f)?, t.as_target())?;
    }
    Ok(total / S::lit(feats.rows() as f64))
}

/// Disparity discrepancy between the main and auxiliary heads; each domain's
/// term is a batch mean. An empty side contributes zero.
pub fn dd_loss<S: Scalar>(
    features_s: &Matrix<S>,
    features_t: &Matrix<S>,
    main: &Model<S>,
    aux: &Model<S>,
    gamma: S,
    soft_targets: bool,
) -> Result<S> {
    check_heads(main, aux)?;
    check_dim("source features", main.feature_dim(), features_s.cols())?;
    check_dim("target features", main.feature_dim(), features_t.cols())?;
    Ok(mean_term(main, aux, features_t, soft_targets)? - gamma * mean_term(main, aux, features_s, soft_targets)?)
}

/// `CE(main(x_s), y_s) + eta * dd(x_s, x_t)`.
pub fn mdd_objective<S: Scalar>(
    batch_s: &Batch<S>,
    batch_t: &Batch<S>,
    model: &Model<S>,
    aux: &Model<S>,
    cfg: &MddConfig<S>,
) -> Result<S> {
    let ys = batch_s
        .labels()
        .ok_or_else(|| Error::Validation("source batch for the MDD objective is unlabeled".into()))?;
    let ce = crate::nn::batch_loss(model, &batch_s.inputs, Targets::Hard(ys), LossKind::CrossEntropy)?;
    let dd = dd_loss(
        &features(model, &batch_s.inputs)?,
        &features(model, &batch_t.inputs)?,
        model,
        aux,
        cfg.gamma,
        cfg.soft_targets,
    )?;
    Ok(ce + cfg.eta * dd)
}

/// Gradient of `dd` with respect to the auxiliary head's parameters.
fn aux_grad<S: Scalar>(
    model: &Model<S>,
    aux: &Model<S>,
    xs: &Matrix<S>,
    xt: &Matrix<S>,
    cfg: &MddConfig<S>,
) -> Result<Vec<S>> {
    let mut grad = vec![S::zero(); aux.params().len()];
    for (x, weight) in [(xt, S::one()), (xs, -cfg.gamma)] {
        if x.is_empty() {
            continue;
        }
        let scale = weight / S::lit(x.rows() as f64);
        for row in x.iter_rows() {
            let f = model.forward_features(row)?;
            let t = DdTarget::of(&model.head_logits(&f)?, cfg.soft_targets);
            let cache = aux.forward_cached(&f)?;
            let (_, dz) = loss_and_dlogits(LossKind::CrossEntropy, &cache.logits, t.as_target())?;
            aux.backward(&cache, &dz, None, Some(&mut grad), scale, false);
        }
    }
    Ok(grad)
}

/// Value and model-parameter gradient of the MDD objective. The dd term
/// reaches the feature extractor through the auxiliary head's input gradient.
fn model_grad<S: Scalar>(
    model: &Model<S>,
    aux: &Model<S>,
    xs: &Matrix<S>,
    ys: &[usize],
    xt: &Matrix<S>,
    cfg: &MddConfig<S>,
) -> Result<(S, Vec<S>)> {
    let mut grad = vec![S::zero(); model.params().len()];
    let ns = S::lit(xs.rows() as f64);
    let mut ce = S::zero();
    let mut dd_s = S::zero();
    for (row, &y) in xs.iter_rows().zip(ys) {
        let cache = model.forward_cached(row)?;
        let (l, dz) = loss_and_dlogits(LossKind::CrossEntropy, &cache.logits, Target::Hard(y))?;
        ce += l;
        let t = DdTarget::of(&cache.logits, cfg.soft_targets);
        let acache = aux.forward_cached(cache.features())?;
        let (la, daz) = loss_and_dlogits(LossKind::CrossEntropy, &acache.logits, t.as_target())?;
        dd_s += la;
        let df = aux.backward(&acache, &daz, None, None, S::one(), true).unwrap();
        let w = -cfg.eta * cfg.gamma;
        let df: Vec<S> = df.into_iter().map(|v| v * w).collect();
        model.backward(&cache, &dz, Some(&df), Some(&mut grad), S::one() / ns, false);
    }
    let mut dd_t = S::zero();
    if !xt.is_empty() {
        let nt = S::lit(xt.rows() as f64);
        let zero_dz = vec![S::zero(); model.classes()];
        for row in xt.iter_rows() {
            let cache = model.forward_cached(row)?;
            let t = DdTarget::of(&cache.logits, cfg.soft_targets);
            let acache = aux.forward_cached(cache.features())?;
            let (la, daz) = loss_and_dlogits(LossKind::CrossEntropy, &acache.logits, t.as_target())?;
            dd_t += la;
            let df: Vec<S> = aux
                .backward(&acache, &daz, None, None, S::one(), true)
                .unwrap()
                .into_iter()
                .map(|v| v * cfg.eta)
                .collect();
            model.backward(&cache, &zero_dz, Some(&df), Some(&mut grad), S::one() / nt, false);
        }
        dd_t /= nt;
    }
    let value = ce / ns + cfg.eta * (dd_t - cfg.gamma * dd_s / ns);
    Ok((value, grad))
}

/// Target inputs for one step: the sampled rows plus their augmented copies.
fn target_stream<S: Scalar>(
    xt: Matrix<S>,
    cfg: &MddConfig<S>,
    grid: Option<&GridShape>,
    rngs: &mut Rngs,
) -> Result<Matrix<S>> {
    let Some(rcfg) = cfg.rma else {
        return Ok(xt);
    };
    let mut aug = Matrix::empty(xt.cols());
    match grid {
        Some(shape) => {
            for row in xt.iter_rows() {
                aug.push_row(&rma(row, shape, &rcfg, &mut rngs.rma)?.image)?;
            }
        }
        None if cfg.coordinate_dropout => {
            for row in xt.iter_rows() {
                aug.push_row(&coordinate_dropout(row, rcfg.mask_ratio, &mut rngs.rma))?;
            }
        }
        None => return Ok(xt),
    }
    xt.vstack(&aug)
}

#[derive(Debug, Clone)]
pub struct PretrainOutput<S> {
    pub model: Model<S>,
    pub aux: Model<S>,
    pub curve: Vec<EpochStats>,
}

/// Trains `model` in place with MDD on labeled source and unlabeled target
/// data. With `eta = 0` or no target data this is exactly plain supervised
/// training on the same batches.
pub fn pretrain_source<S: Scalar>(
    source: &LabeledSet<S>,
    target: &UnlabeledSet<S>,
    mut model: Model<S>,
    cfg: &MddConfig<S>,
    grid: Option<GridShape>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<PretrainOutput<S>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyDataset("source"));
    }
    let mut aux = aux_head_for(&model, &mut rngs.init)?;
    let adapt = !target.is_empty() && cfg.eta > S::zero();
    let aug_shape = if cfg.standard_aug { grid } else { None };
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut aux_opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut target_sampler = CyclicSampler::new(target.len(), cfg.batch_size);
    let mut curve = Vec::with_capacity(cfg.epochs);
    hook(&EpochStats::default(), &model, None)?;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(source.len(), cfg.batch_size, &mut rngs.source_batch);
        for idx in &batches {
            let batch = source.subset(idx);
            let xs = augment_rows(&batch.inputs, aug_shape.as_ref(), &mut rngs.augment)?;
            let (loss, grad) = if adapt {
                let tidx = target_sampler.next_batch(&mut rngs.target_batch);
                let xt = augment_rows(&target.inputs.select(&tidx), aug_shape.as_ref(), &mut rngs.augment)?;
                let xt = target_stream(xt, cfg, grid.as_ref(), rngs)?;
                // ascent on the auxiliary head
                let ga = aux_grad(&model, &aux, &xs, &xt, cfg)?;
                let neg: Vec<S> = ga.into_iter().map(|g| -g).collect();
                aux_opt.step(aux.params_mut(), &neg);
                model_grad(&model, &aux, &xs, &batch.labels, &xt, cfg)?
            } else {
                grad_params(&model, &xs, Targets::Hard(&batch.labels), LossKind::CrossEntropy)?
            };
            total += finite_or_diverged(epoch, "mdd objective", loss.as_f64())?;
            opt.step(model.params_mut(), &grad);
        }
        finite_params(epoch, &model)?;
        finite_params(epoch, &aux)?;
        let stats = EpochStats {
            epoch,
            loss: total / batches.len() as f64,
            ..Default::default()
        };
        hook(&stats, &model, None)?;
        curve.push(stats);
    }
    Ok(PretrainOutput { model, aux, curve })
}

/// A UDA method that turns labeled source and unlabeled target data into an
/// initial source model.
pub trait UdaPretrainer<S: Scalar> {
    fn name(&self) -> &'static str;

    fn pretrain(
        &self,
        source: &LabeledSet<S>,
        target: &UnlabeledSet<S>,
        init: Model<S>,
        grid: Option<GridShape>,
        rngs: &mut Rngs,
        hook: &mut EpochHook<'_, S>,
    ) -> Result<Model<S>>;
}

#[derive(Debug, Clone)]
pub struct Mdd<S>(pub MddConfig<S>);

impl<S: Scalar> UdaPretrainer<S> for Mdd<S> {
    fn name(&self) -> &'static str {
        "mdd"
    }

    fn pretrain(
        &self,
        source: &LabeledSet<S>,
        target: &UnlabeledSet<S>,
        init: Model<S>,
        grid: Option<GridShape>,
        rngs: &mut Rngs,
        hook: &mut EpochHook<'_, S>,
    ) -> Result<Model<S>> {
        Ok(pretrain_source(source, target, init, &self.0, grid, rngs, hook)?.model)
    }
}
