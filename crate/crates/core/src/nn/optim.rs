use crate::scalar::Scalar;

pub trait Optimizer<S> {
    fn step(&mut self, params: &mut [S], grad: &[S]);
    fn lr(&self) -> S;
}

/// Plain gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd<S> {
    pub lr: S,
    pub momentum: S,
    velocity: Vec<S>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(lr: S, momentum: S) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl<S: Scalar> Optimizer<S> for Sgd<S> {
    fn step(&mut self, params: &mut [S], grad: &[S]) {
        if self.lr == S::zero() {
            return;
        }
        if self.momentum == S::zero() {
            for (p, &g) in params.iter_mut().zip(grad) {
                *p -= self.lr * g;
            }
            return;
        }
        if self.velocity.len() != params.len() {
            self.velocity = vec![S::zero(); params.len()];
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }

    fn lr(&self) -> S {
        self.lr
    }
}

/// Adaptive-moment update with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, beta1: S, beta2: S) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: S::lit(1e-8),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl<S: Scalar> Optimizer<S> for Adam<S> {
    fn step(&mut self, params: &mut [S], grad: &[S]) {
        if self.lr == S::zero() {
            return;
        }
        if self.m.len() != params.len() {
            self.m = vec![S::zero(); params.len()];
            self.v = vec![S::zero(); params.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = S::one() - self.beta1.powi(self.t);
        let c2 = S::one() - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (S::one() - self.beta1) * g;
            *v = self.beta2 * *v + (S::one() - self.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    fn lr(&self) -> S {
        self.lr
    }
}
