use super::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam. Moment buffers are matched to parameter tensors by
/// visit order and created on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn coefficients(&mut self) -> (f64, f64) {
        self.step += 1;
        let t = self.step as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }

    fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64], (c1, c2): (f64, f64)) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        if self.moments.len() <= slot {
            self.moments.push((vec![0.0; param.len()], vec![0.0; param.len()]));
        }
        let (m, v) = &mut self.moments[slot];
        assert_eq!(m.len(), param.len(), "parameter tensor {slot} changed shape between steps");
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }

    /// One update of every `(param, grad)` pair, in order.
    pub fn step_params<'a, I>(&mut self, pairs: I)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        let c = self.coefficients();
        for (slot, (param, grad)) in pairs.into_iter().enumerate() {
            self.update(slot, param, grad, c);
        }
    }

    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) {
        let c = self.coefficients();
        let mut slot = 0;
        module.visit_params(&mut |p, g| {
            self.update(slot, p, g, c);
            slot += 1;
        });
    }
}
