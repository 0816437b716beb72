//! Clean/robust accuracy, pseudo-label accuracy, feature distance and
//! embedding export. Evaluation attacks always target the true label.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::attacks::{margin_pgd, pgd, AttackBudget, AttackKind};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{argmax, LossKind, Model, Target};
use crate::scalar::Scalar;

fn nonempty<S: Scalar>(data: &LabeledSet<S>) -> Result<()> {
    if data.is_empty() {
        Err(Error::EmptyDataset("evaluation set"))
    } else {
        Ok(())
    }
}

/// Adversarial example against the true label, dispatching on the budget's loss.
pub fn attack_true_label<S: Scalar>(
    model: &Model<S>,
    x: &[S],
    label: usize,
    budget: &AttackBudget<S>,
) -> Result<Vec<S>> {
    match budget.loss {
        LossKind::CrossEntropy => pgd(model, x, Target::Hard(label), budget, None),
        LossKind::Margin => margin_pgd(model, x, label, budget, None),
    }
}

fn fraction(hits: u64, n: usize) -> f64 {
    hits as f64 / n as f64
}

pub fn clean_accuracy<S: Scalar>(model: &Model<S>, data: &LabeledSet<S>) -> Result<f64> {
    nonempty(data)?;
    let mut hits = 0u64;
    for (x, &y) in data.inputs.iter_rows().zip(&data.labels) {
        hits += u64::from(argmax(&model.forward_logits(x)?) == y);
    }
    Ok(fraction(hits, data.len()))
}

pub fn robust_accuracy<S: Scalar>(model: &Model<S>, data: &LabeledSet<S>, budget: &AttackBudget<S>) -> Result<f64> {
    nonempty(data)?;
    let mut hits = 0u64;
    for (x, &y) in data.inputs.iter_rows().zip(&data.labels) {
        let adv = attack_true_label(model, x, y, budget)?;
        hits += u64::from(argmax(&model.forward_logits(&adv)?) == y);
    }
    Ok(fraction(hits, data.len()))
}

/// Agreement of the teacher's hard pseudo-labels with held-out target labels.
pub fn pseudo_label_accuracy<S: Scalar>(teacher: &Model<S>, target_eval: &LabeledSet<S>) -> Result<f64> {
    clean_accuracy(teacher, target_eval)
}

/// Mean Euclidean distance between clean and adversarial feature vectors.
pub fn feature_distance<S: Scalar>(model: &Model<S>, data: &LabeledSet<S>, budget: &AttackBudget<S>) -> Result<f64> {
    nonempty(data)?;
    let mut total = 0.0f64;
    for (x, &y) in data.inputs.iter_rows().zip(&data.labels) {
        let adv = attack_true_label(model, x, y, budget)?;
        let fc = model.forward_features(x)?;
        let fa = model.forward_features(&adv)?;
        total += fc
            .iter()
            .zip(&fa)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total / data.len() as f64)
}

/// Writes `f_0..f_{k-1},label,kind`: every clean row, then every adversarial row.
pub fn export_embeddings<S: Scalar>(
    model: &Model<S>,
    data: &LabeledSet<S>,
    budget: &AttackBudget<S>,
    path: &Path,
) -> Result<()> {
    nonempty(data)?;
    let mut out = BufWriter::new(File::create(path)?);
    let k = model.feature_dim();
    let header: Vec<String> = (0..k)
        .map(|j| format!("f_{j}"))
        .chain(["label".into(), "kind".into()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut adv_rows = Vec::with_capacity(data.len());
    for (x, &y) in data.inputs.iter_rows().zip(&data.labels) {
        write_embedding(&mut out, &model.forward_features(x)?, y, "clean")?;
        adv_rows.push(attack_true_label(model, x, y, budget)?);
    }
    for (adv, &y) in adv_rows.iter().zip(&data.labels) {
        write_embedding(&mut out, &model.forward_features(adv)?, y, "adv")?;
    }
    out.flush()?;
    Ok(())
}

fn write_embedding<S: Scalar>(out: &mut impl Write, f: &[S], label: usize, kind: &str) -> Result<()> {
    for v in f {
        write!(out, "{v},")?;
    }
    writeln!(out, "{label},{kind}")?;
    Ok(())
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub scheme: String,
    pub clean_acc: f64,
    pub robust_acc: BTreeMap<AttackKind, f64>,
    pub pseudo_acc: f64,
    pub at_loss: Option<f64>,
    pub meta_loss: Option<f64>,
    pub feature_distance: f64,
}

pub const METRICS_HEADER: &str =
    "epoch,scheme,clean_acc,robust_pgd20,robust_fgsm,robust_cwinf,pseudo_acc,at_loss,meta_loss,feature_distance";

/// Evaluation attacks plus the budget used for feature distance.
#[derive(Debug, Clone)]
pub struct EvalSuite<S> {
    pub attacks: Vec<(AttackKind, AttackBudget<S>)>,
    pub feature_budget: AttackBudget<S>,
}

impl<S: Scalar> EvalSuite<S> {
    pub fn new(kinds: &[AttackKind], epsilon: S, alpha: S, clip: Option<(S, S)>) -> Result<Self> {
        let attacks = kinds
            .iter()
            .map(|&k| Ok((k, k.budget(epsilon, alpha, clip)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            attacks,
            feature_budget: AttackKind::Pgd20.budget(epsilon, alpha, clip)?,
        })
    }

    /// Full metrics for `model`; pseudo accuracy uses `teacher` when given, else the model itself.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        epoch: usize,
        scheme: &str,
        model: &Model<S>,
        teacher: Option<&Model<S>>,
        data: &LabeledSet<S>,
        at_loss: Option<f64>,
        meta_loss: Option<f64>,
    ) -> Result<MetricsRecord> {
        let clean_acc = clean_accuracy(model, data)?;
        let pseudo_acc = match teacher {
            Some(t) => pseudo_label_accuracy(t, data)?,
            None => clean_acc,
        };
        let mut robust_acc = BTreeMap::new();
        for (kind, budget) in &self.attacks {
            robust_acc.insert(*kind, robust_accuracy(model, data, budget)?);
        }
        Ok(MetricsRecord {
            epoch,
            scheme: scheme.to_string(),
            clean_acc,
            robust_acc,
            pseudo_acc,
            at_loss,
            meta_loss,
            feature_distance: feature_distance(model, data, &self.feature_budget)?,
        })
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

impl MetricsRecord {
    pub fn robust(&self, kind: AttackKind) -> Option<f64> {
        self.robust_acc.get(&kind).copied()
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.4},{},{},{},{:.4},{},{},{:.6}",
            self.epoch,
            self.scheme,
            self.clean_acc,
            opt(self.robust(AttackKind::Pgd20), 4),
            opt(self.robust(AttackKind::Fgsm), 4),
            opt(self.robust(AttackKind::CwInf), 4),
            self.pseudo_acc,
            opt(self.at_loss, 6),
            opt(self.meta_loss, 6),
            self.feature_distance,
        )
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_line())?;
    }
    out.flush()?;
    Ok(())
}
