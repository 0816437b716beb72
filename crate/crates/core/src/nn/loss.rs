use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Training or attack target for a single example.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a, S> {
    Hard(usize),
    Soft(&'a [S]),
}

/// Targets for a whole batch, one per row.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, S> {
    Hard(&'a [usize]),
    Soft(&'a Matrix<S>),
}

impl<'a, S: Scalar> Targets<'a, S> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(y) => y.len(),
            Targets::Soft(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Target<'a, S> {
        match *self {
            Targets::Hard(y) => Target::Hard(y[i]),
            Targets::Soft(m) => Target::Soft(m.row(i)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Negated, clamped logit margin `min(max_{c != y} z_c - z_y, 0)`; ascending it
    /// pushes the true logit below the best competitor. Hard targets only.
    Margin,
}

pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<S>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn soft_tolerance<S: Scalar>(classes: usize) -> f64 {
    (8.0 * classes as f64 * S::epsilon().as_f64()).max(1e-9)
}

pub(crate) fn validate_target<S: Scalar>(classes: usize, target: Target<'_, S>) -> Result<()> {
    match target {
        Target::Hard(y) if y >= classes => Err(Error::Validation(format!("hard label {y} outside 0..{classes}"))),
        Target::Hard(_) => Ok(()),
        Target::Soft(t) => {
            if t.len() != classes {
                return Err(Error::Shape {
                    context: "soft target",
                    expected: classes,
                    got: t.len(),
                });
            }
            let total: f64 = t.iter().map(|v| v.as_f64()).sum();
            if (total - 1.0).abs() > soft_tolerance::<S>(classes) || t.iter().any(|&v| v < S::zero()) {
                return Err(Error::Validation(format!(
                    "soft target is not a distribution (sum {total})"
                )));
            }
            Ok(())
        }
    }
}

/// Cross-entropy `-sum_c t_c log softmax(z)_c`.
pub fn loss_ce<S: Scalar>(logits: &[S], target: Target<'_, S>) -> Result<S> {
    validate_target(logits.len(), target)?;
    let ls = log_softmax(logits);
    Ok(match target {
        Target::Hard(y) => -ls[y],
        Target::Soft(t) => -t.iter().zip(&ls).map(|(&p, &l)| p * l).sum::<S>(),
    })
}

fn best_other<S: Scalar>(logits: &[S], y: usize) -> usize {
    let mut best: Option<usize> = None;
    for (c, &z) in logits.iter().enumerate() {
        if c == y {
            continue;
        }
        match best {
            Some(b) if z <= logits[b] => {}
            _ => best = Some(c),
        }
    }
    best.expect("at least two classes")
}

pub fn loss_margin<S: Scalar>(logits: &[S], y: usize) -> Result<S> {
    validate_target::<S>(logits.len(), Target::Hard(y))?;
    if logits.len() < 2 {
        return Err(Error::Validation("margin loss needs two classes".into()));
    }
    let other = best_other(logits, y);
    Ok((logits[other] - logits[y]).min(S::zero()))
}

pub fn loss_value<S: Scalar>(kind: LossKind, logits: &[S], target: Target<'_, S>) -> Result<S> {
    match (kind, target) {
        (LossKind::CrossEntropy, t) => loss_ce(logits, t),
        (LossKind::Margin, Target::Hard(y)) => loss_margin(logits, y),
        (LossKind::Margin, Target::Soft(_)) => Err(Error::Validation("margin loss requires a hard label".into())),
    }
}

/// Loss value and its gradient with respect to the logits.
pub fn loss_and_dlogits<S: Scalar>(kind: LossKind, logits: &[S], target: Target<'_, S>) -> Result<(S, Vec<S>)> {
    let value = loss_value(kind, logits, target)?;
    let grad = match (kind, target) {
        (LossKind::CrossEntropy, Target::Hard(y)) => {
            let mut p = softmax(logits);
            p[y] -= S::one();
            p
        }
        (LossKind::CrossEntropy, Target::Soft(t)) => {
            // d/dz of -sum t log softmax = softmax * sum(t) - t
            let mass: S = t.iter().copied().sum();
            softmax(logits)
                .into_iter()
                .zip(t)
                .map(|(p, &tc)| p * mass - tc)
                .collect()
        }
        (LossKind::Margin, Target::Hard(y)) => {
            let mut g = vec![S::zero(); logits.len()];
            let other = best_other(logits, y);
            if logits[other] - logits[y] < S::zero() {
                g[other] = S::one();
                g[y] = -S::one();
            }
            g
        }
        (LossKind::Margin, Target::Soft(_)) => unreachable!("rejected by loss_value"),
    };
    Ok((value, grad))
}
