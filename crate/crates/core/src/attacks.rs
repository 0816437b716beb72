//! L-infinity adversarial examples: projection, FGSM, PGD and a margin-loss
//! PGD used in place of the optimization-based CW attack.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{grad_input, LossKind, Model, Target, Targets};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget<S> {
    pub epsilon: S,
    pub alpha: S,
    pub k_max: usize,
    pub loss: LossKind,
    pub random_start: bool,
    pub clip: Option<(S, S)>,
}

impl<S: Scalar> AttackBudget<S> {
    /// Cross-entropy PGD with `alpha = epsilon / 4` and no random start.
    pub fn pgd(epsilon: S, k_max: usize, clip: Option<(S, S)>) -> Result<Self> {
        Self {
            epsilon,
            alpha: epsilon / S::lit(4.0),
            k_max,
            loss: LossKind::CrossEntropy,
            random_start: false,
            clip,
        }
        .validated()
    }

    /// A zero radius is accepted and yields the identity attack.
    pub fn validated(self) -> Result<Self> {
        if !(self.epsilon >= S::zero()) || !(self.alpha >= S::zero()) {
            return Err(Error::Validation("epsilon and alpha must be non-negative".into()));
        }
        if self.epsilon > S::zero() && self.alpha == S::zero() {
            return Err(Error::Validation("alpha must be positive when epsilon is".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Validation("k_max must be at least 1".into()));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::Validation(format!("clip range ({lo}, {hi}) is empty")));
            }
        }
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: S) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_random_start(mut self, on: bool) -> Self {
        self.random_start = on;
        self
    }
}

/// Clamp into the epsilon-ball around `x`, then into the clip range.
pub fn project_linf<S: Scalar>(x_adv: &[S], x: &[S], budget: &AttackBudget<S>) -> Result<Vec<S>> {
    check_dim("projection", x.len(), x_adv.len())?;
    Ok(x_adv
        .iter()
        .zip(x)
        .map(|(&a, &c)| project_coord(a, c, budget))
        .collect())
}

#[inline]
fn project_coord<S: Scalar>(a: S, c: S, budget: &AttackBudget<S>) -> S {
    let mut v = a.max(c - budget.epsilon).min(c + budget.epsilon);
    if let Some((lo, hi)) = budget.clip {
        v = v.max(lo).min(hi);
    }
    v
}

/// Iterated signed-gradient ascent, projecting after every step; the gradient
/// is taken at the current iterate.
pub fn pgd<S: Scalar>(
    model: &Model<S>,
    x: &[S],
    target: Target<'_, S>,
    budget: &AttackBudget<S>,
    rng: Option<&mut Rng>,
) -> Result<Vec<S>> {
    check_dim("attack input", model.arch().input_dim, x.len())?;
    let mut adv = x.to_vec();
    if budget.random_start {
        let rng = rng.ok_or_else(|| Error::Validation("random start requires an rng".into()))?;
        let eps = budget.epsilon.as_f64();
        for v in adv.iter_mut() {
            *v += S::lit(rng.uniform_range(-eps, eps));
        }
    }
    adv = project_linf(&adv, x, budget)?;
    for _ in 0..budget.k_max {
        let (_, g) = grad_input(model, &adv, target, budget.loss)?;
        for ((a, &c), gi) in adv.iter_mut().zip(x).zip(g) {
            *a = project_coord(*a + budget.alpha * gi.sign0(), c, budget);
        }
    }
    Ok(adv)
}

/// Single step of size epsilon; equal to `pgd` with one step, `alpha = epsilon`.
pub fn fgsm<S: Scalar>(model: &Model<S>, x: &[S], target: Target<'_, S>, budget: &AttackBudget<S>) -> Result<Vec<S>> {
    let one_step = AttackBudget {
        alpha: budget.epsilon,
        k_max: 1,
        random_start: false,
        ..*budget
    };
    pgd(model, x, target, &one_step, None)
}

/// PGD on the clamped logit margin against the true label.
pub fn margin_pgd<S: Scalar>(
    model: &Model<S>,
    x: &[S],
    true_label: usize,
    budget: &AttackBudget<S>,
    rng: Option<&mut Rng>,
) -> Result<Vec<S>> {
    let b = budget.with_loss(LossKind::Margin);
    pgd(model, x, Target::Hard(true_label), &b, rng)
}

/// Attacks every row of `inputs` with `pgd` and the matching target.
pub fn pgd_batch<S: Scalar>(
    model: &Model<S>,
    inputs: &Matrix<S>,
    targets: Targets<'_, S>,
    budget: &AttackBudget<S>,
    mut rng: Option<&mut Rng>,
) -> Result<Matrix<S>> {
    check_dim("attack targets", inputs.rows(), targets.len())?;
    let mut out = Matrix::empty(inputs.cols());
    for (i, x) in inputs.iter_rows().enumerate() {
        let adv = pgd(model, x, targets.get(i), budget, rng.as_deref_mut())?;
        out.push_row(&adv)?;
    }
    Ok(out)
}

/// Named evaluation attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Fgsm,
    Pgd10,
    Pgd20,
    CwInf,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::Fgsm,
        AttackKind::Pgd10,
        AttackKind::Pgd20,
        AttackKind::CwInf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd10 => "pgd10",
            AttackKind::Pgd20 => "pgd20",
            AttackKind::CwInf => "cwinf",
        }
    }

    /// Budget for this attack at radius `epsilon` and PGD step `alpha`.
    pub fn budget<S: Scalar>(self, epsilon: S, alpha: S, clip: Option<(S, S)>) -> Result<AttackBudget<S>> {
        let (k_max, loss, alpha) = match self {
            AttackKind::Fgsm => (1, LossKind::CrossEntropy, epsilon),
            AttackKind::Pgd10 => (10, LossKind::CrossEntropy, alpha),
            AttackKind::Pgd20 => (20, LossKind::CrossEntropy, alpha),
            AttackKind::CwInf => (20, LossKind::Margin, alpha),
        };
        AttackBudget {
            epsilon,
            alpha,
            k_max,
            loss,
            random_start: false,
            clip,
        }
        .validated()
    }

    /// Adversarial version of `x` against its true label.
    pub fn run<S: Scalar>(self, model: &Model<S>, x: &[S], label: usize, budget: &AttackBudget<S>) -> Result<Vec<S>> {
        match self {
            AttackKind::Fgsm => fgsm(model, x, Target::Hard(label), budget),
            AttackKind::Pgd10 | AttackKind::Pgd20 => pgd(model, x, Target::Hard(label), budget, None),
            AttackKind::CwInf => margin_pgd(model, x, label, budget, None),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack `{s}` (expected fgsm, pgd10, pgd20, cwinf)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Arch};

    fn budget(eps: f64, alpha: f64, k: usize) -> AttackBudget<f64> {
        AttackBudget {
            epsilon: eps,
            alpha,
            k_max: k,
            loss: LossKind::CrossEntropy,
            random_start: false,
            clip: None,
        }
    }

    /// 1-D model with z = (x, 0): the class-0 probability is sigmoid(x).
    fn logistic() -> Model<f64> {
        Model::from_params(Arch::new(1, &[], 2, Activation::Identity), vec![1.0, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let b = budget(0.1, 0.025, 1);
        assert_eq!(project_linf(&[0.3], &[0.0], &b).unwrap(), vec![0.1]);
        assert_eq!(
            project_linf(&[0.05, -0.02], &[0.0, 0.0], &b).unwrap(),
            vec![0.05, -0.02]
        );
        let once = project_linf(&[0.3, -5.0], &[0.0, 1.0], &b).unwrap();
        assert_eq!(project_linf(&once, &[0.0, 1.0], &b).unwrap(), once);
        assert!(project_linf(&[0.3], &[0.0, 1.0], &b).is_err());
    }

    #[test]
    fn projection_respects_clip_range() {
        let b = AttackBudget {
            clip: Some((0.0, 1.0)),
            ..budget(0.2, 0.05, 1)
        };
        assert_eq!(project_linf(&[1.15, -0.1], &[0.95, 0.05], &b).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn fgsm_logistic_closed_form() {
        // gradient of the CE wrt x is sigma(0.5) - 1 < 0, so the step is -eps
        let adv = fgsm(&logistic(), &[0.5], Target::Hard(0), &budget(0.1, 0.025, 10)).unwrap();
        assert!((adv[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pgd_saturates_at_ball_boundary() {
        let adv = pgd(&logistic(), &[0.5], Target::Hard(0), &budget(0.1, 0.05, 10), None).unwrap();
        assert!((adv[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_input_unchanged() {
        let m = Model::<f64>::zeros(Arch::new(3, &[4], 2, Activation::Tanh)).unwrap();
        let x = [0.2, -0.3, 0.9];
        assert_eq!(fgsm(&m, &x, Target::Hard(1), &budget(0.3, 0.1, 1)).unwrap(), x.to_vec());
        assert_eq!(
            pgd(&m, &x, Target::Hard(1), &budget(0.3, 0.1, 20), None).unwrap(),
            x.to_vec()
        );
    }

    #[test]
    fn fgsm_equals_single_step_pgd() {
        let mut rng = Rng::new(4, crate::rng::Stream::Init);
        let m = Model::<f64>::init(Arch::new(3, &[6], 3, Activation::Tanh), &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let b = budget(0.2, 0.05, 7);
            let a = fgsm(&m, &x, Target::Hard(2), &b).unwrap();
            let p = pgd(
                &m,
                &x,
                Target::Hard(2),
                &AttackBudget {
                    k_max: 1,
                    alpha: 0.2,
                    ..b
                },
                None,
            )
            .unwrap();
            assert_eq!(a, p);
        }
    }

    #[test]
    fn margin_step_on_two_class_linear_model() {
        // z0 = w0.x, z1 = w1.x; margin gradient (while correct) is w1 - w0
        let w0 = [1.0, -2.0];
        let w1 = [0.5, 1.0];
        let p = vec![w0[0], w0[1], w1[0], w1[1], 0.0, 0.0];
        let m = Model::from_params(Arch::new(2, &[], 2, Activation::Identity), p).unwrap();
        let x = [1.0, -1.0]; // z0 = 3, z1 = -0.5: correctly class 0
        let b = budget(0.5, 0.1, 1);
        let adv = margin_pgd(&m, &x, 0, &b, None).unwrap();
        // moves by -alpha * sign(w0 - w1) = -0.1 * (1, -1)
        assert!((adv[0] - 0.9).abs() < 1e-15 && (adv[1] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn margin_attack_stops_on_misclassified_point() {
        let p = vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0];
        let m = Model::from_params(Arch::new(2, &[], 2, Activation::Identity), p).unwrap();
        let x = [-1.0, 0.3];
        let adv = margin_pgd(&m, &x, 0, &budget(0.5, 0.1, 10), None).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn random_start_needs_rng_and_stays_in_ball() {
        let b = budget(0.1, 0.025, 3).with_random_start(true);
        assert!(pgd(&logistic(), &[0.5], Target::Hard(0), &b, None).is_err());
        let mut rng = Rng::new(1, crate::rng::Stream::Attack);
        for _ in 0..100 {
            let a = pgd(&logistic(), &[0.5], Target::Hard(1), &b, Some(&mut rng)).unwrap();
            assert!((a[0] - 0.5).abs() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn budget_validation() {
        assert!(AttackBudget::<f64>::pgd(0.1, 0, None).is_err());
        assert!(AttackBudget::<f64>::pgd(-0.1, 10, None).is_err());
        assert!(AttackBudget::<f64>::pgd(0.1, 10, Some((1.0, 0.0))).is_err());
        assert!(AttackBudget::<f64>::pgd(0.0, 10, None).is_ok());
        assert_eq!(AttackBudget::<f64>::pgd(0.1, 10, None).unwrap().alpha, 0.025);
        assert_eq!("pgd20".parse::<AttackKind>().unwrap(), AttackKind::Pgd20);
        assert!("pgd7".parse::<AttackKind>().is_err());
    }
}
