//! Teacher-student self-training on pseudo-labeled target data.
//!
//! Each step attacks the target batch against the teacher's pseudo-labels,
//! trains the student on the adversarial batch, and (for the meta variant)
//! moves the teacher along the gradient of the student's post-update loss on
//! labeled source data. The module also hosts the comparison schemes.

use std::fmt;
use std::str::FromStr;

use crate::attacks::{pgd_batch, AttackBudget};
use crate::augment::GridShape;
use crate::data::{DomainPair, LabeledSet, UnlabeledSet};
use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::nn::loss::loss_and_dlogits;
use crate::nn::{
    argmax, batch_loss, grad_params, softmax, Adam, Arch, LossKind, Model, Optimizer, Sgd, Target, Targets,
};
use crate::rng::Rngs;
use crate::scalar::Scalar;
use crate::train::{
    augment_rows, epoch_batches, finite_or_diverged, finite_params, train_supervised, CyclicSampler, EpochHook,
    EpochStats, SupervisedConfig,
};
use crate::uda::{pretrain_source, MddConfig};

/// Teacher predictions for a target batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels<S> {
    /// Row-stochastic `B x C` softmax of the teacher logits.
    pub soft: Matrix<S>,
    /// Row-wise argmax of `soft`, ties to the lowest class.
    pub hard: Vec<usize>,
}

impl<S: Scalar> PseudoLabels<S> {
    pub fn targets(&self, mode: TargetMode) -> Targets<'_, S> {
        match mode {
            TargetMode::Soft => Targets::Soft(&self.soft),
            TargetMode::Hard => Targets::Hard(&self.hard),
        }
    }
}

pub fn pseudo_labels<S: Scalar>(teacher: &Model<S>, x_t: &Matrix<S>) -> Result<PseudoLabels<S>> {
    let mut soft = Matrix::empty(teacher.classes());
    let mut hard = Vec::with_capacity(x_t.rows());
    for x in x_t.iter_rows() {
        let z = teacher.forward_logits(x)?;
        hard.push(argmax(&z));
        soft.push_row(&softmax(&z))?;
    }
    Ok(PseudoLabels { soft, hard })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaMode {
    /// Exact differentiation through one SGD step of the student.
    Unrolled,
    /// First-order approximation: scalar feedback times the teacher's own
    /// hard-label gradient.
    DotApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherSchedule {
    /// One meta step per epoch, on the epoch's final batch.
    EveryEpoch,
    EveryBatch,
}

macro_rules! named_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

named_enum!(TargetMode, "target mode", TargetMode::Soft => "soft", TargetMode::Hard => "hard");
named_enum!(MetaMode, "meta mode", MetaMode::Unrolled => "unrolled", MetaMode::DotApprox => "dot-approx");
named_enum!(TeacherSchedule, "teacher schedule", TeacherSchedule::EveryEpoch => "epoch", TeacherSchedule::EveryBatch => "batch");

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainConfig<S> {
    pub epochs: usize,
    pub batch_size: usize,
    /// Student Adam learning rate.
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    /// Teacher gradient-descent rate for the meta step.
    pub meta_lr: S,
    pub meta_mode: MetaMode,
    pub target_mode: TargetMode,
    pub teacher_schedule: TeacherSchedule,
    /// Training attack (PGD, k_max = 10).
    pub attack: AttackBudget<S>,
    pub standard_aug: bool,
}

impl<S: Scalar> SelfTrainConfig<S> {
    /// Defaults with the given training-attack radius and clip range.
    pub fn with_epsilon(epsilon: S, clip: Option<(S, S)>) -> Result<Self> {
        Ok(Self {
            epochs: 20,
            batch_size: 32,
            lr: S::lit(0.0015),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            meta_lr: S::lit(0.001),
            meta_mode: MetaMode::Unrolled,
            target_mode: TargetMode::Soft,
            teacher_schedule: TeacherSchedule::EveryEpoch,
            attack: AttackBudget::pgd(epsilon, 10, clip)?,
            standard_aug: false,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "self-training needs epochs >= 1 and batch size >= 1".into(),
            ));
        }
        if !(self.lr >= S::zero()) || !(self.meta_lr >= S::zero()) {
            return Err(Error::Validation("learning rates must be non-negative".into()));
        }
        self.attack.validated().map(|_| ())
    }
}

impl<S: Scalar> Default for SelfTrainConfig<S> {
    fn default() -> Self {
        Self::with_epsilon(S::lit(8.0 / 255.0), Some((S::zero(), S::one()))).expect("valid defaults")
    }
}

#[derive(Debug, Clone)]
pub struct AtStep<S> {
    pub x_adv: Matrix<S>,
    /// Adversarial loss before the update.
    pub loss: S,
}

/// Attacks `x_t` against the pseudo-label targets, then takes one optimizer
/// step on the student's loss over the adversarial batch.
pub fn at_step<S: Scalar>(
    student: &mut Model<S>,
    optimizer: &mut dyn Optimizer<S>,
    x_t: &Matrix<S>,
    pl: &PseudoLabels<S>,
    mode: TargetMode,
    budget: &AttackBudget<S>,
    rngs: &mut Rngs,
) -> Result<AtStep<S>> {
    let targets = pl.targets(mode);
    let x_adv = pgd_batch(student, x_t, targets, budget, Some(&mut rngs.attack))?;
    let (loss, grad) = grad_params(student, &x_adv, targets, LossKind::CrossEntropy)?;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            what: "adversarial training loss",
            value: loss.as_f64(),
        });
    }
    optimizer.step(student.params_mut(), &grad);
    Ok(AtStep { x_adv, loss })
}

#[derive(Debug, Clone)]
pub struct MetaGradient<S> {
    /// Source loss of the one-step lookahead student.
    pub meta_loss: S,
    pub grad: Vec<S>,
}

/// Gradient of `CE(student'(x_s), y_s)` with respect to the teacher, where
/// `student' = student - student_lr * grad CE(student(x_adv), softmax(teacher(x_t)))`.
/// `x_adv` is treated as a constant.
///
/// `Unrolled` is exact: the cross term is formed with a forward-mode
/// derivative of the student along the lookahead gradient, then pulled back
/// through the teacher. `DotApprox` uses
/// `student_lr * <grad_lookahead, grad_inner> * grad CE(teacher(x_t), argmax)`.
#[allow(clippy::too_many_arguments)]
pub fn meta_gradient<S: Scalar>(
    teacher: &Model<S>,
    student: &Model<S>,
    x_adv: &Matrix<S>,
    x_t: &Matrix<S>,
    source: (&Matrix<S>, &[usize]),
    student_lr: S,
    mode: MetaMode,
    inner_mode: TargetMode,
) -> Result<MetaGradient<S>> {
    check_dim("adversarial vs clean target batch", x_t.rows(), x_adv.rows())?;
    check_dim("teacher vs student classes", teacher.classes(), student.classes())?;
    if mode == MetaMode::Unrolled && !(teacher.is_smooth() && student.is_smooth()) {
        return Err(Error::Capability(
            "unrolled meta-gradients need smooth activations; use meta mode dot-approx".into(),
        ));
    }
    let pl = pseudo_labels(teacher, x_t)?;
    let inner_targets = match mode {
        MetaMode::Unrolled => Targets::Soft(&pl.soft),
        MetaMode::DotApprox => pl.targets(inner_mode),
    };
    let (_, g_inner) = grad_params(student, x_adv, inner_targets, LossKind::CrossEntropy)?;
    let mut lookahead = student.clone();
    for (p, g) in lookahead.params_mut().iter_mut().zip(&g_inner) {
        *p -= student_lr * *g;
    }
    let (xs, ys) = source;
    let (meta_loss, g_meta) = grad_params(&lookahead, xs, Targets::Hard(ys), LossKind::CrossEntropy)?;
    let b = S::lit(x_t.rows() as f64);
    let mut grad = vec![S::zero(); teacher.params().len()];
    match mode {
        MetaMode::Unrolled => {
            for (i, (xa, xt)) in x_adv.iter_rows().zip(x_t.iter_rows()).enumerate() {
                let (z, dz) = student.jvp_logits(xa, &g_meta)?;
                let q = softmax(&z);
                let shift: S = q.iter().zip(&dz).map(|(&a, &b)| a * b).sum();
                // directional derivative of log softmax
                let v: Vec<S> = dz.iter().map(|&d| d - shift).collect();
                let p = pl.soft.row(i);
                let pv: S = p.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                let du: Vec<S> = p
                    .iter()
                    .zip(&v)
                    .map(|(&pc, &vc)| student_lr / b * pc * (vc - pv))
                    .collect();
                let cache = teacher.forward_cached(xt)?;
                teacher.backward(&cache, &du, None, Some(&mut grad), S::one(), false);
            }
        }
        MetaMode::DotApprox => {
            let h = student_lr * g_meta.iter().zip(&g_inner).map(|(&a, &b)| a * b).sum::<S>();
            for (xt, &y) in x_t.iter_rows().zip(&pl.hard) {
                let cache = teacher.forward_cached(xt)?;
                let (_, dz) = loss_and_dlogits(LossKind::CrossEntropy, &cache.logits, Target::Hard(y))?;
                teacher.backward(&cache, &dz, None, Some(&mut grad), h / b, false);
            }
        }
    }
    Ok(MetaGradient { meta_loss, grad })
}

/// One teacher descent step on the meta-gradient. Returns the lookahead meta loss.
#[allow(clippy::too_many_arguments)]
pub fn meta_step<S: Scalar>(
    teacher: &mut Model<S>,
    student: &Model<S>,
    x_adv: &Matrix<S>,
    x_t: &Matrix<S>,
    source: (&Matrix<S>, &[usize]),
    cfg: &SelfTrainConfig<S>,
    optimizer: &mut dyn Optimizer<S>,
) -> Result<S> {
    let mg = meta_gradient(
        teacher,
        student,
        x_adv,
        x_t,
        source,
        cfg.lr,
        cfg.meta_mode,
        cfg.target_mode,
    )?;
    optimizer.step(teacher.params_mut(), &mg.grad);
    Ok(mg.meta_loss)
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutput<S> {
    pub student: Model<S>,
    pub teacher: Model<S>,
    pub curve: Vec<EpochStats>,
}

/// Adversarial self-training of a student initialised as a copy of `teacher`.
///
/// With `meta` the teacher receives meta steps on the configured schedule;
/// without it the teacher stays frozen (naive self-training). The reported
/// meta loss is the updated student's source loss in both cases.
#[allow(clippy::too_many_arguments)]
pub fn self_train<S: Scalar>(
    mut teacher: Model<S>,
    source: &LabeledSet<S>,
    target: &UnlabeledSet<S>,
    cfg: &SelfTrainConfig<S>,
    meta: bool,
    grid: Option<GridShape>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<SelfTrainOutput<S>> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyDataset("target"));
    }
    if source.is_empty() {
        return Err(Error::EmptyDataset("source"));
    }
    if meta && cfg.meta_mode == MetaMode::Unrolled && !teacher.is_smooth() {
        return Err(Error::Capability(
            "unrolled meta-gradients need smooth activations; use meta mode dot-approx".into(),
        ));
    }
    let aug_shape = if cfg.standard_aug { grid } else { None };
    let mut student = teacher.clone_model();
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2);
    let mut teacher_opt = Sgd::new(cfg.meta_lr, S::zero());
    let mut source_sampler = CyclicSampler::new(source.len(), cfg.batch_size);
    let mut curve = Vec::with_capacity(cfg.epochs);
    hook(&EpochStats::default(), &student, Some(&teacher))?;
    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(target.len(), cfg.batch_size, &mut rngs.target_batch);
        let mut at_total = 0.0;
        let mut meta_total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let x_t = augment_rows(&target.inputs.select(idx), aug_shape.as_ref(), &mut rngs.augment)?;
            let pl = pseudo_labels(&teacher, &x_t)?;
            let before = student.clone();
            let step = at_step(&mut student, &mut opt, &x_t, &pl, cfg.target_mode, &cfg.attack, rngs)
                .map_err(|e| with_epoch(e, epoch))?;
            at_total += finite_or_diverged(epoch, "adversarial training loss", step.loss.as_f64())?;
            let src = source.subset(&source_sampler.next_batch(&mut rngs.source_batch));
            let meta_loss = batch_loss(
                &student,
                &src.inputs,
                Targets::Hard(&src.labels),
                LossKind::CrossEntropy,
            )?;
            meta_total += finite_or_diverged(epoch, "meta loss", meta_loss.as_f64())?;
            let due = match cfg.teacher_schedule {
                TeacherSchedule::EveryBatch => true,
                TeacherSchedule::EveryEpoch => b + 1 == batches.len(),
            };
            if meta && due {
                let lookahead_loss = meta_step(
                    &mut teacher,
                    &before,
                    &step.x_adv,
                    &x_t,
                    (&src.inputs, &src.labels),
                    cfg,
                    &mut teacher_opt,
                )?;
                finite_or_diverged(epoch, "lookahead meta loss", lookahead_loss.as_f64())?;
            }
        }
        finite_params(epoch, &student)?;
        finite_params(epoch, &teacher)?;
        let n = batches.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: at_total / n,
            at_loss: Some(at_total / n),
            meta_loss: Some(meta_total / n),
        };
        hook(&stats, &student, Some(&teacher))?;
        curve.push(stats);
    }
    Ok(SelfTrainOutput {
        student,
        teacher,
        curve,
    })
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence { what, value, .. } => Error::Divergence { epoch, what, value },
        other => other,
    }
}

/// The five compared training schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Natural UDA (MDD pre-training only).
    Uda,
    /// Adversarial training on labeled source data only.
    SourceAt,
    /// Adversarial source examples, then UDA on them and clean target data.
    AtUda,
    /// UDA pre-training, then adversarial self-training with a frozen teacher.
    UdaAt,
    /// UDA pre-training, then adversarial self-training with meta steps.
    Srouda,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Uda,
        Scheme::SourceAt,
        Scheme::AtUda,
        Scheme::UdaAt,
        Scheme::Srouda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Uda => "uda",
            Scheme::SourceAt => "source-at",
            Scheme::AtUda => "at-uda",
            Scheme::UdaAt => "uda-at",
            Scheme::Srouda => "srouda",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown scheme `{s}` (expected uda, source-at, at-uda, uda-at, srouda)"
            ))
        })
    }
}

/// Everything a scheme needs besides the data and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<S> {
    pub arch: Arch,
    pub mdd: MddConfig<S>,
    pub selftrain: SelfTrainConfig<S>,
}

impl<S: Scalar> PipelineConfig<S> {
    fn supervised(&self, grid: Option<GridShape>) -> SupervisedConfig<S> {
        SupervisedConfig {
            epochs: self.mdd.epochs,
            lr: self.mdd.lr,
            momentum: self.mdd.momentum,
            batch_size: self.mdd.batch_size,
            standard_aug: if self.mdd.standard_aug { grid } else { None },
        }
    }
}

/// Natural UDA: MDD pre-training from a fresh initialisation.
pub fn run_uda<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<Model<S>> {
    let init = Model::init(cfg.arch.clone(), &mut rngs.init)?;
    Ok(pretrain_source(
        &pair.source,
        &pair.target_train,
        init,
        &cfg.mdd,
        pair.meta.grid,
        rngs,
        hook,
    )?
    .model)
}

/// Standard adversarial training on source data; the target is never seen.
pub fn run_source_only_at<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<Model<S>> {
    let mut model = Model::init(cfg.arch.clone(), &mut rngs.init)?;
    train_supervised(
        &mut model,
        &pair.source,
        &cfg.supervised(pair.meta.grid),
        Some(&cfg.selftrain.attack),
        rngs,
        hook,
    )?;
    Ok(model)
}

/// Adversarialises the source set against a naturally trained source model,
/// then runs UDA on (adversarial source, clean target). With a zero radius
/// this is exactly [`run_uda`].
pub fn run_at_uda<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<Model<S>> {
    let init = Model::init(cfg.arch.clone(), &mut rngs.init)?;
    let mut side = rngs.clone();
    let mut attacker = init.clone();
    train_supervised(
        &mut attacker,
        &pair.source,
        &cfg.supervised(pair.meta.grid),
        None,
        &mut side,
        &mut crate::train::no_hook,
    )?;
    let adv = pgd_batch(
        &attacker,
        &pair.source.inputs,
        Targets::Hard(&pair.source.labels),
        &cfg.selftrain.attack,
        Some(&mut side.attack),
    )?;
    let adv_source = LabeledSet::new(adv, pair.source.labels.clone())?;
    Ok(pretrain_source(
        &adv_source,
        &pair.target_train,
        init,
        &cfg.mdd,
        pair.meta.grid,
        rngs,
        hook,
    )?
    .model)
}

/// UDA pre-training followed by self-training; the hook sees only the
/// self-training epochs.
fn run_self_training<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    meta: bool,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<SelfTrainOutput<S>> {
    let init = Model::init(cfg.arch.clone(), &mut rngs.init)?;
    let teacher = pretrain_source(
        &pair.source,
        &pair.target_train,
        init,
        &cfg.mdd,
        pair.meta.grid,
        rngs,
        &mut crate::train::no_hook,
    )?
    .model;
    self_train(
        teacher,
        &pair.source,
        &pair.target_train,
        &cfg.selftrain,
        meta,
        pair.meta.grid,
        rngs,
        hook,
    )
}

pub fn run_uda_at<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<SelfTrainOutput<S>> {
    run_self_training(pair, cfg, false, rngs, hook)
}

pub fn run_srouda<S: Scalar>(
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    rngs: &mut Rngs,
    hook: &mut EpochHook<'_, S>,
) -> Result<SelfTrainOutput<S>> {
    run_self_training(pair, cfg, true, rngs, hook)
}

/// Runs `scheme` and returns the final target model.
pub fn run_scheme<S: Scalar>(
    scheme: Scheme,
    pair: &DomainPair<S>,
    cfg: &PipelineConfig<S>,
    seed: u64,
    hook: &mut EpochHook<'_, S>,
) -> Result<Model<S>> {
    let mut rngs = Rngs::new(seed);
    match scheme {
        Scheme::Uda => run_uda(pair, cfg, &mut rngs, hook),
        Scheme::SourceAt => run_source_only_at(pair, cfg, &mut rngs, hook),
        Scheme::AtUda => run_at_uda(pair, cfg, &mut rngs, hook),
        Scheme::UdaAt => Ok(run_uda_at(pair, cfg, &mut rngs, hook)?.student),
        Scheme::Srouda => Ok(run_srouda(pair, cfg, &mut rngs, hook)?.student),
    }
}
