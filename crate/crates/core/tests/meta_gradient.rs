use robuda::nn::{grad_params, softmax, Activation, Arch, LossKind, Model, Targets};
use robuda::selftrain::{meta_gradient, MetaMode, TargetMode};
use robuda::{Matrix, Rng, Stream};

struct Problem {
    teacher: Model<f64>,
    student: Model<f64>,
    x_t: Matrix<f64>,
    x_adv: Matrix<f64>,
    xs: Matrix<f64>,
    ys: Vec<usize>,
}

fn problem(seed: u64, activation: Activation) -> Problem {
    let mut rng = Rng::new(seed, Stream::Init);
    let arch = Arch::new(2, &[4], 2, activation);
    assert!(arch.param_count() <= 50);
    let teacher = Model::init(arch.clone(), &mut rng).unwrap();
    let student = Model::init(arch, &mut rng).unwrap();
    let mut mk =
        |n: usize| Matrix::from_rows(2, &(0..n).map(|_| vec![rng.normal(), rng.normal()]).collect::<Vec<_>>()).unwrap();
    let x_t = mk(6);
    let x_adv = mk(6);
    let xs = mk(7);
    Problem {
        teacher,
        student,
        x_t,
        x_adv,
        xs,
        ys: vec![0, 1, 1, 0, 1, 0, 0],
    }
}

/// Source loss after one explicit SGD step of the student on the teacher's soft labels.
fn outer_loss(p: &Problem, teacher_params: &[f64], lr: f64) -> f64 {
    let teacher = Model::from_params(p.teacher.arch().clone(), teacher_params.to_vec()).unwrap();
    let mut soft = Matrix::empty(2);
    for x in p.x_t.iter_rows() {
        soft.push_row(&softmax(&teacher.forward_logits(x).unwrap())).unwrap();
    }
    let (_, g) = grad_params(&p.student, &p.x_adv, Targets::Soft(&soft), LossKind::CrossEntropy).unwrap();
    let stepped: Vec<f64> = p.student.params().iter().zip(&g).map(|(w, gi)| w - lr * gi).collect();
    let student = Model::from_params(p.student.arch().clone(), stepped).unwrap();
    grad_params(&student, &p.xs, Targets::Hard(&p.ys), LossKind::CrossEntropy)
        .unwrap()
        .0
}

#[test]
fn unrolled_meta_gradient_matches_central_differences() {
    for (seed, act) in [(1, Activation::Tanh), (2, Activation::Softplus), (3, Activation::Tanh)] {
        let p = problem(seed, act);
        let lr = 0.5;
        let mg = meta_gradient(
            &p.teacher,
            &p.student,
            &p.x_adv,
            &p.x_t,
            (&p.xs, &p.ys),
            lr,
            MetaMode::Unrolled,
            TargetMode::Soft,
        )
        .unwrap();
        assert!((mg.meta_loss - outer_loss(&p, p.teacher.params(), lr)).abs() < 1e-12);
        let h = 1e-5;
        let mut fd = Vec::new();
        for j in 0..p.teacher.params().len() {
            let mut plus = p.teacher.params().to_vec();
            let mut minus = plus.clone();
            plus[j] += h;
            minus[j] -= h;
            fd.push((outer_loss(&p, &plus, lr) - outer_loss(&p, &minus, lr)) / (2.0 * h));
        }
        let num: f64 = mg
            .grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(den > 1e-6, "degenerate oracle");
        assert!(num / den <= 1e-3, "relative error {} for seed {seed}", num / den);
    }
}

#[test]
fn small_teacher_step_along_negative_meta_gradient_reduces_outer_loss() {
    let p = problem(4, Activation::Tanh);
    let lr = 0.5;
    let mg = meta_gradient(
        &p.teacher,
        &p.student,
        &p.x_adv,
        &p.x_t,
        (&p.xs, &p.ys),
        lr,
        MetaMode::Unrolled,
        TargetMode::Soft,
    )
    .unwrap();
    let stepped: Vec<f64> = p
        .teacher
        .params()
        .iter()
        .zip(&mg.grad)
        .map(|(w, g)| w - 1e-3 * g)
        .collect();
    assert!(outer_loss(&p, &stepped, lr) < outer_loss(&p, p.teacher.params(), lr));
}

#[test]
fn dot_approx_is_scaled_teacher_hard_label_gradient() {
    let p = problem(5, Activation::Tanh);
    let lr = 0.3;
    let mg = meta_gradient(
        &p.teacher,
        &p.student,
        &p.x_adv,
        &p.x_t,
        (&p.xs, &p.ys),
        lr,
        MetaMode::DotApprox,
        TargetMode::Hard,
    )
    .unwrap();
    let hard: Vec<usize> = p
        .x_t
        .iter_rows()
        .map(|x| robuda::nn::argmax(&p.teacher.forward_logits(x).unwrap()))
        .collect();
    let (_, g_inner) = grad_params(&p.student, &p.x_adv, Targets::Hard(&hard), LossKind::CrossEntropy).unwrap();
    let stepped: Vec<f64> = p
        .student
        .params()
        .iter()
        .zip(&g_inner)
        .map(|(w, g)| w - lr * g)
        .collect();
    let look = Model::from_params(p.student.arch().clone(), stepped).unwrap();
    let (_, g_meta) = grad_params(&look, &p.xs, Targets::Hard(&p.ys), LossKind::CrossEntropy).unwrap();
    let h = lr * g_meta.iter().zip(&g_inner).map(|(a, b)| a * b).sum::<f64>();
    let (_, g_teacher) = grad_params(&p.teacher, &p.x_t, Targets::Hard(&hard), LossKind::CrossEntropy).unwrap();
    for (a, b) in mg.grad.iter().zip(&g_teacher) {
        assert!((a - h * b).abs() <= 1e-12 * (1.0 + (h * b).abs()));
    }
}
