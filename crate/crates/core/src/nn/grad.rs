use crate::error::{check_dim, Error, Result};
use crate::matrix::Matrix;
use crate::nn::loss::{loss_and_dlogits, loss_value, LossKind, Target, Targets};
use crate::nn::model::Model;
use crate::scalar::Scalar;

fn check_batch<S: Scalar>(model: &Model<S>, inputs: &Matrix<S>, targets: &Targets<'_, S>) -> Result<()> {
    check_dim("batch input width", model.arch().input_dim, inputs.cols())?;
    check_dim("batch targets", inputs.rows(), targets.len())?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset("batch"));
    }
    Ok(())
}

/// Mean loss over the batch.
pub fn batch_loss<S: Scalar>(
    model: &Model<S>,
    inputs: &Matrix<S>,
    targets: Targets<'_, S>,
    kind: LossKind,
) -> Result<S> {
    check_batch(model, inputs, &targets)?;
    let mut total = S::zero();
    for (i, x) in inputs.iter_rows().enumerate() {
        total += loss_value(kind, &model.forward_logits(x)?, targets.get(i))?;
    }
    Ok(total / S::lit(inputs.rows() as f64))
}

/// Mean batch loss and its gradient with respect to the flat parameters.
pub fn grad_params<S: Scalar>(
    model: &Model<S>,
    inputs: &Matrix<S>,
    targets: Targets<'_, S>,
    kind: LossKind,
) -> Result<(S, Vec<S>)> {
    check_batch(model, inputs, &targets)?;
    let scale = S::one() / S::lit(inputs.rows() as f64);
    let mut grad = vec![S::zero(); model.params().len()];
    let mut total = S::zero();
    for (i, x) in inputs.iter_rows().enumerate() {
        let cache = model.forward_cached(x)?;
        let (l, dz) = loss_and_dlogits(kind, &cache.logits, targets.get(i))?;
        total += l;
        model.backward(&cache, &dz, None, Some(&mut grad), scale, false);
    }
    Ok((total * scale, grad))
}

/// Loss at a single input and its gradient with respect to that input.
pub fn grad_input<S: Scalar>(model: &Model<S>, x: &[S], target: Target<'_, S>, kind: LossKind) -> Result<(S, Vec<S>)> {
    let cache = model.forward_cached(x)?;
    let (l, dz) = loss_and_dlogits(kind, &cache.logits, target)?;
    let gx = model
        .backward(&cache, &dz, None, None, S::one(), true)
        .expect("input gradient requested");
    Ok((l, gx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{Activation, Arch};
    use crate::rng::{Rng, Stream};

    // Central differences on the forward pass only; independent of backward().
    fn fd_params(model: &Model<f64>, inputs: &Matrix<f64>, t: Targets<'_, f64>) -> Vec<f64> {
        let h = 1e-6;
        (0..model.params().len())
            .map(|k| {
                let mut p = model.clone();
                p.params_mut()[k] += h;
                let lp = batch_loss(&p, inputs, t, LossKind::CrossEntropy).unwrap();
                p.params_mut()[k] -= 2.0 * h;
                let lm = batch_loss(&p, inputs, t, LossKind::CrossEntropy).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nb).max(1e-12)
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        for (seed, act) in [(1, Activation::Tanh), (2, Activation::Softplus), (3, Activation::Tanh)] {
            let mut rng = Rng::new(seed, Stream::Init);
            let m = Model::<f64>::init(Arch::new(3, &[5, 4], 3, act), &mut rng).unwrap();
            let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
            let x = Matrix::from_rows(3, &rows).unwrap();
            let y = [0, 2, 1, 1, 0, 2];
            let soft = Matrix::from_rows(3, &(0..6).map(|_| vec![0.2, 0.5, 0.3]).collect::<Vec<_>>()).unwrap();
            for t in [Targets::Hard(&y), Targets::Soft(&soft)] {
                let (_, g) = grad_params(&m, &x, t, LossKind::CrossEntropy).unwrap();
                let fd = fd_params(&m, &x, t);
                let e = rel_err(&g, &fd);
                assert!(e <= 1e-5, "relative error {e}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = Rng::new(9, Stream::Init);
        let m = Model::<f64>::init(Arch::new(4, &[6, 6], 3, Activation::Tanh), &mut rng).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let (_, g) = grad_input(&m, &x, Target::Hard(1), LossKind::CrossEntropy).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..4)
                .map(|k| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let lp =
                        loss_value(LossKind::CrossEntropy, &m.forward_logits(&xp).unwrap(), Target::Hard(1)).unwrap();
                    let lm =
                        loss_value(LossKind::CrossEntropy, &m.forward_logits(&xm).unwrap(), Target::Hard(1)).unwrap();
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            assert!(rel_err(&g, &fd) <= 1e-5);
        }
    }

    #[test]
    fn logistic_input_gradient_closed_form() {
        // two-class linear model with z = (x, 0): softmax[0] = sigma(x)
        let m = Model::from_params(Arch::new(1, &[], 2, Activation::Identity), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let (_, g) = grad_input(&m, &[0.5], Target::Hard(0), LossKind::CrossEntropy).unwrap();
        let sigma = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((g[0] - (sigma - 1.0)).abs() < 1e-15);
        assert!(g[0] < 0.0);
    }

    #[test]
    fn constant_output_model_has_zero_input_gradient() {
        let arch = Arch::new(2, &[3], 2, Activation::Tanh);
        let mut rng = Rng::new(5, Stream::Init);
        let mut m = Model::<f64>::init(arch, &mut rng).unwrap();
        let split = m.split_index();
        let n = m.params().len();
        // head weights zero, biases kept
        for k in split..n - 2 {
            m.params_mut()[k] = 0.0;
        }
        m.params_mut()[n - 1] = 0.7;
        let (_, g) = grad_input(&m, &[0.3, -0.1], Target::Hard(0), LossKind::CrossEntropy).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_stationary_point_has_zero_gradient() {
        // zero model, balanced hard labels: softmax is uniform and the two
        // examples' head-bias gradients cancel; all other gradients are zero.
        let m = Model::<f64>::zeros(Arch::new(2, &[3], 2, Activation::Tanh)).unwrap();
        let x = Matrix::from_rows(2, &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (_, g) = grad_params(&m, &x, Targets::Hard(&[0, 1]), LossKind::CrossEntropy).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_the_loss_scales_the_gradient() {
        let mut rng = Rng::new(21, Stream::Init);
        let m = Model::<f64>::init(Arch::new(2, &[4], 2, Activation::Tanh), &mut rng).unwrap();
        let cache = m.forward_cached(&[0.3, -0.8]).unwrap();
        let (_, dz) = loss_and_dlogits(LossKind::CrossEntropy, &cache.logits, Target::Hard(1)).unwrap();
        let mut g1 = vec![0.0; m.params().len()];
        let mut g4 = vec![0.0; m.params().len()];
        m.backward(&cache, &dz, None, Some(&mut g1), 1.0, false);
        m.backward(&cache, &dz, None, Some(&mut g4), 4.0, false);
        for (a, b) in g1.iter().zip(&g4) {
            assert_eq!(4.0 * a, *b);
        }
    }
}
