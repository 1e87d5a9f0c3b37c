use rand::Rng as _;

use super::{Matrix, Module, NnError};
use crate::seed::Rng;

/// Weight initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He/Kaiming uniform for rectifiers with the given negative slope.
    KaimingUniform { negative_slope: f64 },
    XavierUniform,
    Zeros,
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(out, in)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
    requires_grad: bool,
    input: Option<Matrix>,
    /// Scales the accumulated weight gradient. Anything but 1.0 corrupts the
    /// backward pass on purpose; used to prove the gradient checker bites.
    #[doc(hidden)]
    pub grad_fault: f64,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, init: Init, rng: &mut Rng) -> Self {
        let bound = match init {
            Init::KaimingUniform { negative_slope } => {
                (6.0 / ((1.0 + negative_slope * negative_slope) * in_dim as f64)).sqrt()
            }
            Init::XavierUniform => (6.0 / (in_dim + out_dim) as f64).sqrt(),
            Init::Zeros => 0.0,
        };
        let mut weight = Matrix::zeros(out_dim, in_dim);
        if bound > 0.0 {
            weight.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        Self::from_parts(weight, vec![0.0; out_dim]).expect("consistent shapes")
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self, NnError> {
        if bias.len() != weight.rows() {
            return Err(NnError::Shape { op: "linear bias", left: weight.shape(), right: (bias.len(), 1) });
        }
        Ok(Self {
            grad_weight: Matrix::zeros(weight.rows(), weight.cols()),
            grad_bias: vec![0.0; bias.len()],
            weight,
            bias,
            requires_grad: true,
            input: None,
            grad_fault: 1.0,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

impl Module for Linear {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols() != self.in_dim() {
            return Err(NnError::Shape { op: "linear forward", left: x.shape(), right: self.weight.shape() });
        }
        let mut y = x.gemm(false, &self.weight, true)?;
        for r in 0..y.rows() {
            y.row_mut(r).iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoCache("linear"))?;
        if grad.cols() != self.out_dim() || grad.rows() != x.rows() {
            return Err(NnError::Shape { op: "linear backward", left: grad.shape(), right: (x.rows(), self.out_dim()) });
        }
        if self.requires_grad {
            let gw = grad.gemm(true, x, false)?;
            let fault = self.grad_fault;
            self.grad_weight.data_mut().iter_mut().zip(gw.data()).for_each(|(a, b)| *a += fault * b);
            self.grad_bias.iter_mut().zip(grad.column_sums()).for_each(|(a, b)| *a += b);
        }
        grad.matmul(&self.weight)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(self.weight.data_mut(), self.grad_weight.data_mut());
        f(&mut self.bias, &mut self.grad_bias);
    }

    fn set_training(&mut self, _training: bool) {}

    fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    fn freeze_dropout(&mut self, _frozen: bool) {}
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    training: bool,
}

/// Per-feature batch normalization.
///
/// Training mode normalizes by the batch mean and biased batch variance and
/// moves the running estimates by `running = (1 - momentum) * running +
/// momentum * batch`. Inference mode uses the running estimates and accepts
/// any batch size.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    training: bool,
    requires_grad: bool,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            grad_gamma: vec![0.0; features],
            grad_beta: vec![0.0; features],
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            training: true,
            requires_grad: true,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_training(&self) -> bool {
        self.training
    }
}

impl Module for BatchNorm {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        let d = self.features();
        if x.cols() != d {
            return Err(NnError::Shape { op: "batchnorm forward", left: x.shape(), right: (x.rows(), d) });
        }
        let n = x.rows();
        let (mean, var) = if self.training {
            if n < 2 {
                return Err(NnError::BatchTooSmall(n));
            }
            let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / n as f64).collect();
            let mut var = vec![0.0; d];
            for row in x.iter_rows() {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let m = self.momentum;
            for j in 0..d {
                self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
                self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Matrix::zeros(n, d);
        let mut y = Matrix::zeros(n, d);
        for r in 0..n {
            for j in 0..d {
                let h = (x.get(r, j) - mean[j]) * inv_std[j];
                xhat.set(r, j, h);
                y.set(r, j, self.gamma[j] * h + self.beta[j]);
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, training: self.training });
        Ok(y)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoCache("batchnorm"))?;
        grad.same_shape(&cache.xhat, "batchnorm backward")?;
        let (n, d) = grad.shape();
        let mut sum_g = vec![0.0; d];
        let mut sum_g_xhat = vec![0.0; d];
        for r in 0..n {
            for j in 0..d {
                let g = grad.get(r, j);
                sum_g[j] += g;
                sum_g_xhat[j] += g * cache.xhat.get(r, j);
            }
        }
        let mut dx = Matrix::zeros(n, d);
        for r in 0..n {
            for j in 0..d {
                let scale = self.gamma[j] * cache.inv_std[j];
                let g = grad.get(r, j);
                let v = if cache.training {
                    scale * (g - sum_g[j] / n as f64 - cache.xhat.get(r, j) * sum_g_xhat[j] / n as f64)
                } else {
                    scale * g
                };
                dx.set(r, j, v);
            }
        }
        if self.requires_grad {
            self.grad_gamma.iter_mut().zip(&sum_g_xhat).for_each(|(a, b)| *a += b);
            self.grad_beta.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b);
        }
        Ok(dx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        f(&mut self.gamma, &mut self.grad_gamma);
        f(&mut self.beta, &mut self.grad_beta);
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    fn freeze_dropout(&mut self, _frozen: bool) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::LeakyRelu(a) => {
                if x >= 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Self::Tanh => x.tanh(),
            Self::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the input `x` and output `y`. Kinks take the
    /// positive-side slope.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> String {
        match self {
            Self::Relu => "relu".into(),
            Self::LeakyRelu(a) => format!("leaky_relu({a})"),
            Self::Tanh => "tanh".into(),
            Self::Sigmoid => "sigmoid".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
    cache: Option<(Matrix, Matrix)>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }
}

impl Module for Activation {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        let kind = self.kind;
        let y = x.map(|v| kind.apply(v));
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let (x, y) = self.cache.as_ref().ok_or(NnError::NoCache("activation"))?;
        grad.same_shape(x, "activation backward")?;
        let kind = self.kind;
        let mut out = grad.clone();
        for ((g, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
            *g *= kind.derivative(xv, yv);
        }
        Ok(out)
    }

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut [f64], &mut [f64])) {}
    fn set_training(&mut self, _training: bool) {}
    fn set_requires_grad(&mut self, _on: bool) {}
    fn freeze_dropout(&mut self, _frozen: bool) {}
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)` in training,
/// identity in inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    training: bool,
    frozen: bool,
    rng: Rng,
    mask: Option<Matrix>,
}

impl Dropout {
    pub fn new(p: f64, rng: Rng) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} not in [0,1)");
        Self { p, training: true, frozen: false, rng, mask: None }
    }

    pub fn mask(&self) -> Option<&Matrix> {
        self.mask.as_ref()
    }
}

impl Module for Dropout {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        if !self.training || self.p == 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.shape() == x.shape());
        if !reuse {
            let keep = 1.0 - self.p;
            let scale = 1.0 / keep;
            let mut mask = Matrix::zeros(x.rows(), x.cols());
            for m in mask.data_mut() {
                *m = if self.rng.random::<f64>() < keep { scale } else { 0.0 };
            }
            self.mask = Some(mask);
        }
        let mask = self.mask.as_ref().expect("mask set above");
        x.zip_map(mask, "dropout", |a, b| a * b)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        match &self.mask {
            Some(mask) => grad.zip_map(mask, "dropout backward", |a, b| a * b),
            None => Ok(grad.clone()),
        }
    }

    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut [f64], &mut [f64])) {}

    fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn set_requires_grad(&mut self, _on: bool) {}

    fn freeze_dropout(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Dropout(Dropout),
}

impl Layer {
    fn inner(&mut self) -> &mut dyn Module {
        match self {
            Layer::Linear(l) => l,
            Layer::BatchNorm(l) => l,
            Layer::Activation(l) => l,
            Layer::Dropout(l) => l,
        }
    }
}

impl Module for Layer {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        self.inner().forward(x)
    }
    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        self.inner().backward(grad)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.inner().visit_params(f)
    }
    fn set_training(&mut self, training: bool) {
        self.inner().set_training(training)
    }
    fn set_requires_grad(&mut self, on: bool) {
        self.inner().set_requires_grad(on)
    }
    fn freeze_dropout(&mut self, frozen: bool) {
        self.inner().freeze_dropout(frozen)
    }
}

/// Straight-line stack of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.layers.iter_mut().for_each(|l| l.visit_params(f));
    }

    fn set_training(&mut self, training: bool) {
        self.layers.iter_mut().for_each(|l| l.set_training(training));
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.layers.iter_mut().for_each(|l| l.set_requires_grad(on));
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        self.layers.iter_mut().for_each(|l| l.freeze_dropout(frozen));
    }
}
