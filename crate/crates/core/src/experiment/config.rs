//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::selftrain::{MetaMode, Scheme, TargetMode, TeacherSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    TwoMoons,
    Gaussian,
    Grid,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonUnits {
    /// Multiples of the source inputs' mean per-coordinate standard deviation.
    Std,
    /// Raw input units.
    Raw,
    /// `std` for unbounded data, `raw` for data with a fixed range.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($variant => $name),+ }
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

keyword_enum!(DatasetKind, "dataset kind",
    DatasetKind::TwoMoons => "two-moons", DatasetKind::Gaussian => "gaussian",
    DatasetKind::Grid => "grid", DatasetKind::File => "file");
keyword_enum!(EpsilonUnits, "epsilon units",
    EpsilonUnits::Std => "std", EpsilonUnits::Raw => "raw", EpsilonUnits::Auto => "auto");
keyword_enum!(Precision, "precision", Precision::F32 => "f32", Precision::F64 => "f64");

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub rotation_deg: f64,
    pub noise_sd: f64,
    pub dim: usize,
    pub mean_shift: f64,
    pub grid: (usize, usize, usize),
    pub style_shift: f64,
    pub path: Option<PathBuf>,
}

/// Everything needed to reproduce a run. All fields have defaults; `to_text`
/// writes every one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub precision: Precision,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epsilon: f64,
    pub epsilon_units: EpsilonUnits,
    /// PGD step as a fraction of epsilon (training and evaluation).
    pub alpha_ratio: f64,
    pub train_k: usize,
    pub attacks: Vec<AttackKind>,
    pub eval_every: usize,
    pub export_embeddings: bool,
    pub mdd_gamma: f64,
    pub mdd_eta: f64,
    pub mdd_soft_targets: bool,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_momentum: f64,
    pub pretrain_batch_size: usize,
    pub rma_enabled: bool,
    pub rma_mask_ratio: f64,
    pub coordinate_dropout: bool,
    pub standard_aug: bool,
    pub selftrain_epochs: usize,
    pub selftrain_batch_size: usize,
    pub selftrain_lr: f64,
    pub selftrain_beta1: f64,
    pub selftrain_beta2: f64,
    pub target_mode: TargetMode,
    pub meta_lr: f64,
    pub meta_mode: MetaMode,
    pub meta_schedule: TeacherSchedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec {
                kind: DatasetKind::TwoMoons,
                n: 2000,
                rotation_deg: 45.0,
                noise_sd: 0.1,
                dim: 2,
                mean_shift: 1.0,
                grid: (8, 8, 1),
                style_shift: 0.5,
                path: None,
            },
            scheme: Scheme::Srouda,
            seeds: vec![0],
            out: PathBuf::from("runs"),
            precision: Precision::F64,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            epsilon: 0.1,
            epsilon_units: EpsilonUnits::Auto,
            alpha_ratio: 0.25,
            train_k: 10,
            attacks: AttackKind::ALL.to_vec(),
            eval_every: 1,
            export_embeddings: false,
            mdd_gamma: 4.0,
            mdd_eta: 0.1,
            mdd_soft_targets: false,
            pretrain_epochs: 20,
            pretrain_lr: 0.004,
            pretrain_momentum: 0.0,
            pretrain_batch_size: 32,
            rma_enabled: true,
            rma_mask_ratio: 0.25,
            coordinate_dropout: false,
            standard_aug: false,
            selftrain_epochs: 20,
            selftrain_batch_size: 32,
            selftrain_lr: 0.0015,
            selftrain_beta1: 0.9,
            selftrain_beta2: 0.999,
            target_mode: TargetMode::Soft,
            meta_lr: 0.001,
            meta_mode: MetaMode::Unrolled,
            meta_schedule: TeacherSchedule::EveryEpoch,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.dataset;
        match key {
            "dataset.kind" => d.kind = v.parse()?,
            "dataset.n" => d.n = parse(key, v)?,
            "dataset.rotation_deg" => d.rotation_deg = parse(key, v)?,
            "dataset.noise_sd" => d.noise_sd = parse(key, v)?,
            "dataset.dim" => d.dim = parse(key, v)?,
            "dataset.mean_shift" => d.mean_shift = parse(key, v)?,
            "dataset.grid" => {
                let g: Vec<usize> = parse_list(key, &v.replace('x', ","))?;
                if g.len() != 3 {
                    return Err(Error::Config(format!("`{key}` needs h,w,c, got `{v}`")));
                }
                d.grid = (g[0], g[1], g[2]);
            }
            "dataset.style_shift" => d.style_shift = parse(key, v)?,
            "dataset.path" => d.path = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "scheme" => self.scheme = v.parse()?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "precision" => self.precision = v.parse()?,
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.activation" => self.activation = v.parse()?,
            "attack.epsilon" => self.epsilon = parse(key, v)?,
            "attack.epsilon_units" => self.epsilon_units = v.parse()?,
            "attack.alpha_ratio" => self.alpha_ratio = parse(key, v)?,
            "attack.train_k" => self.train_k = parse(key, v)?,
            "eval.attacks" => {
                self.attacks = parse_list::<String>(key, v)?
                    .iter()
                    .map(|s| s.parse())
                    .collect::<Result<_>>()?
            }
            "eval.every" => self.eval_every = parse(key, v)?,
            "eval.export_embeddings" => self.export_embeddings = parse_bool(key, v)?,
            "mdd.gamma" => self.mdd_gamma = parse(key, v)?,
            "mdd.eta" => self.mdd_eta = parse(key, v)?,
            "mdd.soft_targets" => self.mdd_soft_targets = parse_bool(key, v)?,
            "pretrain.epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain.lr" => self.pretrain_lr = parse(key, v)?,
            "pretrain.momentum" => self.pretrain_momentum = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain_batch_size = parse(key, v)?,
            "rma.enabled" => self.rma_enabled = parse_bool(key, v)?,
            "rma.mask_ratio" => self.rma_mask_ratio = parse(key, v)?,
            "augment.coordinate_dropout" => self.coordinate_dropout = parse_bool(key, v)?,
            "augment.standard" => self.standard_aug = parse_bool(key, v)?,
            "selftrain.epochs" => self.selftrain_epochs = parse(key, v)?,
            "selftrain.batch_size" => self.selftrain_batch_size = parse(key, v)?,
            "selftrain.lr" => self.selftrain_lr = parse(key, v)?,
            "selftrain.beta1" => self.selftrain_beta1 = parse(key, v)?,
            "selftrain.beta2" => self.selftrain_beta2 = parse(key, v)?,
            "selftrain.target_mode" => self.target_mode = v.parse()?,
            "meta.lr" => self.meta_lr = parse(key, v)?,
            "meta.mode" => self.meta_mode = v.parse()?,
            "meta.schedule" => self.meta_schedule = v.parse()?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form `from_text` reads back.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let pairs: Vec<(&str, String)> = vec![
            ("dataset.kind", d.kind.name().into()),
            ("dataset.n", d.n.to_string()),
            ("dataset.rotation_deg", d.rotation_deg.to_string()),
            ("dataset.noise_sd", d.noise_sd.to_string()),
            ("dataset.dim", d.dim.to_string()),
            ("dataset.mean_shift", d.mean_shift.to_string()),
            ("dataset.grid", format!("{},{},{}", d.grid.0, d.grid.1, d.grid.2)),
            ("dataset.style_shift", d.style_shift.to_string()),
            (
                "dataset.path",
                d.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("scheme", self.scheme.name().into()),
            ("seeds", join(&self.seeds)),
            ("out", self.out.display().to_string()),
            ("precision", self.precision.name().into()),
            ("model.hidden", join(&self.hidden)),
            ("model.activation", self.activation.to_string()),
            ("attack.epsilon", self.epsilon.to_string()),
            ("attack.epsilon_units", self.epsilon_units.name().into()),
            ("attack.alpha_ratio", self.alpha_ratio.to_string()),
            ("attack.train_k", self.train_k.to_string()),
            ("eval.attacks", join(&self.attacks)),
            ("eval.every", self.eval_every.to_string()),
            ("eval.export_embeddings", self.export_embeddings.to_string()),
            ("mdd.gamma", self.mdd_gamma.to_string()),
            ("mdd.eta", self.mdd_eta.to_string()),
            ("mdd.soft_targets", self.mdd_soft_targets.to_string()),
            ("pretrain.epochs", self.pretrain_epochs.to_string()),
            ("pretrain.lr", self.pretrain_lr.to_string()),
            ("pretrain.momentum", self.pretrain_momentum.to_string()),
            ("pretrain.batch_size", self.pretrain_batch_size.to_string()),
            ("rma.enabled", self.rma_enabled.to_string()),
            ("rma.mask_ratio", self.rma_mask_ratio.to_string()),
            ("augment.coordinate_dropout", self.coordinate_dropout.to_string()),
            ("augment.standard", self.standard_aug.to_string()),
            ("selftrain.epochs", self.selftrain_epochs.to_string()),
            ("selftrain.batch_size", self.selftrain_batch_size.to_string()),
            ("selftrain.lr", self.selftrain_lr.to_string()),
            ("selftrain.beta1", self.selftrain_beta1.to_string()),
            ("selftrain.beta2", self.selftrain_beta2.to_string()),
            ("selftrain.target_mode", self.target_mode.to_string()),
            ("meta.lr", self.meta_lr.to_string()),
            ("meta.mode", self.meta_mode.to_string()),
            ("meta.schedule", self.meta_schedule.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.attacks.is_empty() {
            return fail("eval.attacks must name at least one attack");
        }
        if !(self.epsilon >= 0.0) {
            return fail("attack.epsilon must be >= 0");
        }
        if !(self.alpha_ratio > 0.0) {
            return fail("attack.alpha_ratio must be > 0");
        }
        if self.train_k == 0 || self.eval_every == 0 {
            return fail("attack.train_k and eval.every must be >= 1");
        }
        if self.dataset.kind == DatasetKind::File && self.dataset.path.is_none() {
            return fail("dataset.kind = file needs dataset.path");
        }
        if !(0.0..=1.0).contains(&self.rma_mask_ratio) {
            return fail("rma.mask_ratio must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Reads `key = value` pairs without interpreting them.
pub fn read_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
