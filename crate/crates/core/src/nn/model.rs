use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
    /// Not differentiable at zero; gradient checks and unrolled meta-gradients
    /// are not supported with it.
    Relu,
    Identity,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    #[inline]
    fn apply<S: Scalar>(self, u: S) -> S {
        match self {
            Activation::Tanh => u.tanh(),
            Activation::Softplus => {
                if u > S::lit(30.0) {
                    u
                } else {
                    u.exp().ln_1p()
                }
            }
            Activation::Relu => u.max(S::zero()),
            Activation::Identity => u,
        }
    }

    /// Derivative given the pre-activation `u` and the output `a = apply(u)`.
    #[inline]
    fn derivative<S: Scalar>(self, u: S, a: S) -> S {
        match self {
            Activation::Tanh => S::one() - a * a,
            Activation::Softplus => S::one() / (S::one() + (-u).exp()),
            Activation::Relu => {
                if u > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Identity => S::one(),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Feed-forward architecture: `input_dim -> hidden... -> classes`.
///
/// Every hidden layer is the feature extractor; the final affine layer is the
/// classifier head. With no hidden layers the features are the input itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl Arch {
    pub fn new(input_dim: usize, hidden: &[usize], classes: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden: hidden.to_vec(),
            classes,
            activation,
        }
    }

    /// A single affine layer `features -> classes`, used for auxiliary heads.
    pub fn head(feature_dim: usize, classes: usize) -> Self {
        Self::new(feature_dim, &[], classes, Activation::Identity)
    }

    /// `(fan_in, fan_out)` of each affine layer, head last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.classes));
        dims
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Number of leading parameters that belong to the feature extractor.
    pub fn split_index(&self) -> usize {
        let dims = self.layer_dims();
        dims[..dims.len() - 1].iter().map(|&(i, o)| i * o + o).sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Validation(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Forward-pass intermediates needed for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Cache<S> {
    /// `acts[0]` is the input, `acts[l + 1]` the output of hidden layer `l`.
    pub acts: Vec<Vec<S>>,
    pub pre: Vec<Vec<S>>,
    pub logits: Vec<S>,
}

impl<S> Cache<S> {
    pub fn features(&self) -> &[S] {
        self.acts.last().expect("input is always cached")
    }
}

/// Small differentiable classifier with a flat parameter vector.
///
/// Layout per layer: weights `fan_out x fan_in` row-major, then biases.
/// Parameters `[..split_index]` form the feature extractor, the rest the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    arch: Arch,
    params: Vec<S>,
    split_index: usize,
}

impl<S: Scalar> Model<S> {
    pub fn zeros(arch: Arch) -> Result<Self> {
        let n = arch.param_count();
        Self::from_params(arch, vec![S::zero(); n])
    }

    pub fn from_params(arch: Arch, params: Vec<S>) -> Result<Self> {
        arch.validate()?;
        check_dim("model parameters", arch.param_count(), params.len())?;
        let split_index = arch.split_index();
        Ok(Self {
            arch,
            params,
            split_index,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Arch, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::with_capacity(arch.param_count());
        for (fan_in, fan_out) in arch.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(S::lit(rng.uniform_range(-limit, limit)));
            }
            params.extend(std::iter::repeat_n(S::zero(), fan_out));
        }
        Self::from_params(arch, params)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn feature_params(&self) -> &[S] {
        &self.params[..self.split_index]
    }

    pub fn head_params(&self) -> &[S] {
        &self.params[self.split_index..]
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim()
    }

    pub fn is_smooth(&self) -> bool {
        self.arch.hidden.is_empty() || self.arch.activation.is_smooth()
    }

    /// Deep copy; the copy shares nothing with `self`.
    pub fn clone_model(&self) -> Self {
        self.clone()
    }

    fn affine(&self, offset: usize, fan_in: usize, fan_out: usize, input: &[S]) -> Vec<S> {
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                row.iter().zip(input).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi)
            })
            .collect()
    }

    pub(crate) fn forward_cached(&self, x: &[S]) -> Result<Cache<S>> {
        check_dim("model input", self.arch.input_dim, x.len())?;
        let dims = self.arch.layer_dims();
        let act = self.arch.activation;
        let mut acts = Vec::with_capacity(dims.len());
        let mut pre = Vec::with_capacity(dims.len() - 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for &(fan_in, fan_out) in &dims[..dims.len() - 1] {
            let u = self.affine(offset, fan_in, fan_out, acts.last().unwrap());
            acts.push(u.iter().map(|&v| act.apply(v)).collect());
            pre.push(u);
            offset += fan_in * fan_out + fan_out;
        }
        let (fan_in, fan_out) = dims[dims.len() - 1];
        let logits = self.affine(offset, fan_in, fan_out, acts.last().unwrap());
        Ok(Cache { acts, pre, logits })
    }

    pub fn forward_features(&self, x: &[S]) -> Result<Vec<S>> {
        let mut cache = self.forward_cached(x)?;
        Ok(cache.acts.pop().unwrap())
    }

    pub fn forward_logits(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_cached(x)?.logits)
    }

    /// Applies only the classifier head to a feature vector.
    pub fn head_logits(&self, features: &[S]) -> Result<Vec<S>> {
        check_dim("head input", self.arch.feature_dim(), features.len())?;
        let (fan_in, fan_out) = *self.arch.layer_dims().last().unwrap();
        Ok(self.affine(self.split_index, fan_in, fan_out, features))
    }

    /// Backpropagates `dlogits` (plus an optional extra gradient arriving at the
    /// feature vector) through the network.
    ///
    /// Parameter gradients are accumulated as `grad += scale * dL/dparams` when
    /// `grad` is given. Returns `dL/dx` when `want_input` is set.
    pub(crate) fn backward(
        &self,
        cache: &Cache<S>,
        dlogits: &[S],
        dfeatures: Option<&[S]>,
        mut grad: Option<&mut [S]>,
        scale: S,
        want_input: bool,
    ) -> Option<Vec<S>> {
        let dims = self.arch.layer_dims();
        let act = self.arch.activation;
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        let last = dims.len() - 1;
        let mut delta = dlogits.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let a_in = &cache.acts[l];
            let w_off = offsets[l];
            if let Some(g) = grad.as_deref_mut() {
                let b_off = w_off + fan_in * fan_out;
                for o in 0..fan_out {
                    let d = scale * delta[o];
                    if d == S::zero() {
                        continue;
                    }
                    let row = &mut g[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    for (gi, &ai) in row.iter_mut().zip(a_in) {
                        *gi += d * ai;
                    }
                    g[b_off + o] += d;
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &self.params[w_off..w_off + fan_in * fan_out];
            let mut da = vec![S::zero(); fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == S::zero() {
                    continue;
                }
                for (dai, &wi) in da.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *dai += wi * d;
                }
            }
            if l == last {
                if let Some(df) = dfeatures {
                    for (dai, &v) in da.iter_mut().zip(df) {
                        *dai += v;
                    }
                }
            }
            if l == 0 {
                return Some(da);
            }
            let u = &cache.pre[l - 1];
            let a = &cache.acts[l];
            delta = da
                .iter()
                .zip(u.iter().zip(a))
                .map(|(&g, (&ui, &ai))| g * act.derivative(ui, ai))
                .collect();
        }
        unreachable!("loop returns at layer 0")
    }

    /// Logits at `x` and their directional derivative along `direction` in
    /// parameter space (forward-mode).
    pub fn jvp_logits(&self, x: &[S], direction: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        check_dim("model input", self.arch.input_dim, x.len())?;
        check_dim("parameter direction", self.params.len(), direction.len())?;
        let dims = self.arch.layer_dims();
        let act = self.arch.activation;
        let last = dims.len() - 1;
        let mut a = x.to_vec();
        let mut da = vec![S::zero(); x.len()];
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let dw = &direction[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let db = &direction[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut u = Vec::with_capacity(fan_out);
            let mut du = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut s = b[o];
                let mut ds = db[o];
                for i in 0..fan_in {
                    s += w[o * fan_in + i] * a[i];
                    ds += dw[o * fan_in + i] * a[i] + w[o * fan_in + i] * da[i];
                }
                u.push(s);
                du.push(ds);
            }
            off += fan_in * fan_out + fan_out;
            if l == last {
                return Ok((u, du));
            }
            a = u.iter().map(|&v| act.apply(v)).collect();
            da = u
                .iter()
                .zip(&a)
                .zip(&du)
                .map(|((&ui, &ai), &d)| act.derivative(ui, ai) * d)
                .collect();
        }
        unreachable!("returns at the head layer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn tiny_arch() -> Arch {
        Arch::new(2, &[2], 2, Activation::Tanh)
    }

    #[test]
    fn zero_model_gives_zero_features_and_logits() {
        let m = Model::<f64>::zeros(Arch::new(3, &[4, 5], 3, Activation::Tanh)).unwrap();
        let x = [0.3, -2.0, 7.0];
        assert_eq!(m.forward_features(&x).unwrap(), vec![0.0; 5]);
        assert_eq!(m.forward_logits(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = Arch::new(2, &[2], 2, Activation::Identity);
        // hidden W = I, b = 0; head zero
        let mut p = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        p.extend([0.0; 6]);
        let m = Model::from_params(arch, p).unwrap();
        assert_eq!(m.forward_features(&[0.5, -0.2]).unwrap(), vec![0.5, -0.2]);
    }

    #[test]
    fn hand_set_tanh_network_matches_manual_pass() {
        // hidden: W = [[1, 2], [-1, 0.5]], b = [0.1, -0.2]
        // head:   W = [[0.3, -0.4], [1.0, 1.0]], b = [0.0, 0.5]
        let p = vec![
            1.0, 2.0, -1.0, 0.5, 0.1, -0.2, //
            0.3, -0.4, 1.0, 1.0, 0.0, 0.5,
        ];
        let m = Model::from_params(tiny_arch(), p).unwrap();
        let x = [0.2, -0.3];
        let h0 = (1.0f64 * 0.2 + 2.0 * -0.3 + 0.1).tanh();
        let h1 = (-1.0f64 * 0.2 + 0.5 * -0.3 - 0.2).tanh();
        let f = m.forward_features(&x).unwrap();
        assert!((f[0] - h0).abs() < 1e-15 && (f[1] - h1).abs() < 1e-15);
        let z = m.forward_logits(&x).unwrap();
        assert!((z[0] - (0.3 * h0 - 0.4 * h1)).abs() < 1e-15);
        assert!((z[1] - (h0 + h1 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn linear_two_class_logits() {
        let arch = Arch::new(2, &[], 2, Activation::Identity);
        let m = Model::from_params(arch, vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.forward_logits(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
    }

    #[test]
    fn wrong_input_dim_is_a_shape_error() {
        let m = Model::<f64>::zeros(tiny_arch()).unwrap();
        assert!(matches!(m.forward_logits(&[1.0, 2.0, 3.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn split_index_partitions_params() {
        let arch = Arch::new(2, &[32, 32], 2, Activation::Tanh);
        let m = Model::<f64>::zeros(arch.clone()).unwrap();
        assert_eq!(m.split_index(), 2 * 32 + 32 + 32 * 32 + 32);
        assert_eq!(m.feature_params().len() + m.head_params().len(), m.params().len());
        assert_eq!(m.head_params().len(), 32 * 2 + 2);
    }

    #[test]
    fn clone_is_independent_and_bit_identical() {
        let mut rng = Rng::new(3, Stream::Init);
        let m = Model::<f64>::init(Arch::new(2, &[8, 8], 3, Activation::Tanh), &mut rng).unwrap();
        let mut c = m.clone_model();
        let mut xr = Rng::new(3, Stream::Data);
        let xs: Vec<[f64; 2]> = (0..100).map(|_| [xr.normal(), xr.normal()]).collect();
        for x in &xs {
            assert_eq!(m.forward_logits(x).unwrap(), c.forward_logits(x).unwrap());
        }
        let before: Vec<_> = xs.iter().map(|x| m.forward_logits(x).unwrap()).collect();
        c.params_mut().iter_mut().for_each(|p| *p += 1.0);
        let after: Vec<_> = xs.iter().map(|x| m.forward_logits(x).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn jvp_matches_finite_difference_in_parameters() {
        let mut rng = Rng::new(11, Stream::Init);
        let m = Model::<f64>::init(Arch::new(3, &[4, 3], 3, Activation::Softplus), &mut rng).unwrap();
        let dir: Vec<f64> = (0..m.params().len()).map(|_| rng.normal()).collect();
        let x = [0.1, -0.4, 0.9];
        let (_, dz) = m.jvp_logits(&x, &dir).unwrap();
        let h = 1e-6;
        let shifted = |s: f64| {
            let p: Vec<f64> = m.params().iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            Model::from_params(m.arch().clone(), p)
                .unwrap()
                .forward_logits(&x)
                .unwrap()
        };
        let (zp, zm) = (shifted(h), shifted(-h));
        for c in 0..3 {
            let fd = (zp[c] - zm[c]) / (2.0 * h);
            assert!((fd - dz[c]).abs() < 1e-7, "{fd} vs {}", dz[c]);
        }
    }
}
