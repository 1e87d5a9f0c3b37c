use rand::seq::SliceRandom;

use super::{check_cols, FeatureMatrix, RegressError, Standardizer, TargetScale};
use crate::nn::{
    self, mse_loss, Activation, ActivationKind, Adam, AdamConfig, Dropout, Init, Layer, Linear, Matrix, Module,
    Sequential,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: vec![128, 64], dropout: 0.3, batch_size: 32, epochs: 100, lr: 1e-3 }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), RegressError> {
        if self.hidden.iter().any(|&h| h == 0) || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(RegressError::Config("mlp sizes and learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(RegressError::Config(format!("mlp dropout {} out of [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Feed-forward regressor `in → hidden (ReLU, dropout) … → 1` trained with
/// MSE and Adam on standardized features and target.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub scaler: Standardizer,
    pub target: TargetScale,
    net: Sequential,
}

impl MlpModel {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[f64],
        params: &MlpParams,
        standardize: bool,
        seed_value: u64,
    ) -> Result<Self, RegressError> {
        params.validate()?;
        if x.rows() < params.batch_size {
            return Err(RegressError::TooFewRows { kind: "mlp", need: params.batch_size, got: x.rows() });
        }
        let scaler = if standardize { Standardizer::fit(x) } else { Standardizer::identity(x.cols()) };
        let target = if standardize { TargetScale::fit(y) } else { TargetScale { mean: 0.0, std: 1.0 } };

        let mut init = seed::stream(seed_value, "mlp-init");
        let mut layers = Vec::new();
        let mut width = x.cols();
        for (i, &h) in params.hidden.iter().enumerate() {
            layers.push(Layer::Linear(Linear::new(width, h, Init::KaimingUniform { negative_slope: 0.0 }, &mut init)));
            layers.push(Layer::Activation(Activation::new(ActivationKind::Relu)));
            if params.dropout > 0.0 {
                let rng = seed::stream(seed_value, &format!("mlp-dropout-{i}"));
                layers.push(Layer::Dropout(Dropout::new(params.dropout, rng)));
            }
            width = h;
        }
        layers.push(Layer::Linear(Linear::new(width, 1, Init::XavierUniform, &mut init)));
        let mut net = Sequential::new(layers);

        let xs = Matrix::from_vec(x.rows(), x.cols(), scaler.transform(x)?.iter_rows().flatten().copied().collect())?;
        let ys = Matrix::from_vec(y.len(), 1, y.iter().map(|v| target.forward(*v)).collect())?;
        let mut adam = Adam::new(AdamConfig { lr: params.lr, ..AdamConfig::default() });
        let mut shuffle = seed::stream(seed_value, "mlp-shuffle");
        let mut order: Vec<usize> = (0..x.rows()).collect();
        net.set_training(true);
        for epoch in 1..=params.epochs {
            order.shuffle(&mut shuffle);
            for (b, chunk) in order.chunks(params.batch_size).enumerate() {
                net.zero_grad();
                let pred = net.forward(&xs.select_rows(chunk))?;
                let (loss, grad) = mse_loss(&pred, &ys.select_rows(chunk))?;
                if !loss.is_finite() {
                    return Err(RegressError::NonFiniteLoss { epoch, batch: b + 1 });
                }
                net.backward(&grad)?;
                adam.step(&mut net);
            }
        }
        net.set_training(false);
        Ok(Self { scaler, target, net })
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        check_cols(x, self.scaler.mean.len())?;
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        let xs = Matrix::from_vec(x.rows(), x.cols(), self.scaler.transform(x)?.iter_rows().flatten().copied().collect())?;
        // Inference forward only touches caches, so a scratch copy keeps
        // prediction free of shared mutation.
        let out = self.net.clone().forward(&xs)?;
        Ok(out.data().iter().map(|v| self.target.inverse(*v)).collect())
    }

    pub(super) fn dump(&self, out: &mut String) {
        self.scaler.dump(out);
        super::push_line(out, "target", &[self.target.mean, self.target.std]);
        nn::write_layers(out, &self.net.layers);
    }
}
