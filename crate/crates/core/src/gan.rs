//! Conditional GAN mapping vegetated reflectance to bare-soil reflectance.
//!
//! The generator is a residual MLP: a stem projects the bands to 64
//! features, a chain of residual blocks reshapes them (64→128→64→64→32 by
//! default) and a tanh head maps back to band space. The discriminator
//! scores `[veg | bare]` concatenations. Both work on reflectance
//! normalized to [-1, 1].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::dataset::PairedRecord;
use crate::nn::{
    self, bce_loss, Activation, ActivationKind, Adam, AdamConfig, BatchNorm, Dropout, Init, Layer, Linear, Matrix,
    Module, NnError, Sequential, WeightsHeader, WeightsReader,
};
use crate::seed::{self, Rng};
use crate::spectral::{denormalize_reflectance, normalize_reflectance, BandVector, SpectralError};

#[derive(Debug, Error)]
pub enum GanError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("generator must be in inference mode to reconstruct")]
    NotInference,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("weights file is for role `{found}`, expected `{expected}`")]
    Role { expected: String, found: String },
    #[error("weights file has {found} bands, expected {expected}")]
    BandMismatch { expected: usize, found: usize },
}

pub const GENERATOR_ROLE: &str = "generator";
pub const DISCRIMINATOR_ROLE: &str = "discriminator";
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DISCRIMINATOR_DROPOUT: f64 = 0.3;
/// Scale applied to the Xavier-initialized generator head.
pub const HEAD_INIT_GAIN: f64 = 0.1;

fn relu_init() -> Init {
    Init::KaimingUniform { negative_slope: 0.0 }
}

fn leaky_init() -> Init {
    Init::KaimingUniform { negative_slope: LEAKY_SLOPE }
}

/// `y = skip(x) + ReLU(BN(W1 · ReLU(BN(W0 x + b0)) + b1))`, where `skip` is
/// the identity when the block keeps its width and a learned projection
/// otherwise.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub main: Sequential,
    pub skip: Option<Layer>,
    in_dim: usize,
    out_dim: usize,
}

impl ResidualBlock {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let main = Sequential::new(vec![
            Layer::Linear(Linear::new(in_dim, out_dim, relu_init(), rng)),
            Layer::BatchNorm(BatchNorm::new(out_dim)),
            Layer::Activation(Activation::new(ActivationKind::Relu)),
            Layer::Linear(Linear::new(out_dim, out_dim, relu_init(), rng)),
            Layer::BatchNorm(BatchNorm::new(out_dim)),
            Layer::Activation(Activation::new(ActivationKind::Relu)),
        ]);
        let skip = (in_dim != out_dim).then(|| Layer::Linear(Linear::new(in_dim, out_dim, Init::XavierUniform, rng)));
        Self { main, skip, in_dim, out_dim }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.in_dim, self.out_dim)
    }

    /// Zeroes both linear layers of the main path.
    pub fn zero_main_path(&mut self) {
        for l in &mut self.main.layers {
            if let Layer::Linear(lin) = l {
                lin.weight.data_mut().fill(0.0);
                lin.bias.fill(0.0);
            }
        }
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.main.layers.iter().chain(self.skip.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.main.layers.iter_mut().chain(self.skip.iter_mut())
    }
}

impl Module for ResidualBlock {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols() != self.in_dim {
            return Err(NnError::Shape { op: "residual block", left: x.shape(), right: (x.rows(), self.in_dim) });
        }
        let mut y = self.main.forward(x)?;
        match &mut self.skip {
            Some(p) => y.add_assign(&p.forward(x)?)?,
            None => y.add_assign(x)?,
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let mut gx = self.main.backward(grad)?;
        match &mut self.skip {
            Some(p) => gx.add_assign(&p.backward(grad)?)?,
            None => gx.add_assign(grad)?,
        }
        Ok(gx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.layers_mut().for_each(|l| l.visit_params(f));
    }

    fn set_training(&mut self, training: bool) {
        self.layers_mut().for_each(|l| l.set_training(training));
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.layers_mut().for_each(|l| l.set_requires_grad(on));
    }

    fn freeze_dropout(&mut self, _frozen: bool) {}
}

/// Generator layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorArch {
    pub n_bands: usize,
    pub stem_dim: usize,
    /// `(in, out)` per residual block, chained from `stem_dim`.
    pub blocks: Vec<(usize, usize)>,
}

impl GeneratorArch {
    pub fn new(n_bands: usize) -> Self {
        Self { n_bands, stem_dim: 64, blocks: vec![(64, 128), (128, 64), (64, 64), (64, 32)] }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        if self.n_bands == 0 || self.stem_dim == 0 {
            return Err(GanError::Config("generator dimensions must be positive".into()));
        }
        let mut width = self.stem_dim;
        for &(i, o) in &self.blocks {
            if i != width || o == 0 {
                return Err(GanError::Config(format!(
                    "residual block {i}->{o} does not chain from width {width}"
                )));
            }
            width = o;
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.blocks.last().map_or(self.stem_dim, |b| b.1)
    }

    fn encode(&self) -> String {
        self.blocks.iter().map(|(i, o)| format!("{i}:{o}")).collect::<Vec<_>>().join(",")
    }

    fn decode(n_bands: usize, stem: &str, blocks: &str) -> Option<Self> {
        let stem_dim = stem.parse().ok()?;
        let blocks = if blocks == "-" {
            Vec::new()
        } else {
            blocks
                .split(',')
                .map(|b| {
                    let (i, o) = b.split_once(':')?;
                    Some((i.parse().ok()?, o.parse().ok()?))
                })
                .collect::<Option<Vec<_>>>()?
        };
        Some(Self { n_bands, stem_dim, blocks })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    arch: GeneratorArch,
    pub stem: Sequential,
    pub blocks: Vec<ResidualBlock>,
    pub head: Sequential,
    training: bool,
}

impl GeneratorNet {
    /// Each block's second batch-norm scale starts at zero so blocks begin as
    /// their skip path, and the head starts with small weights so tanh is
    /// not saturated before training.
    pub fn new(arch: GeneratorArch, rng: &mut Rng) -> Result<Self, GanError> {
        arch.validate()?;
        let stem = Sequential::new(vec![
            Layer::Linear(Linear::new(arch.n_bands, arch.stem_dim, relu_init(), rng)),
            Layer::BatchNorm(BatchNorm::new(arch.stem_dim)),
            Layer::Activation(Activation::new(ActivationKind::Relu)),
        ]);
        let blocks = arch.blocks.iter().map(|&(i, o)| ResidualBlock::new(i, o, rng)).collect();
        let head = Sequential::new(vec![
            Layer::Linear(Linear::new(arch.output_width(), arch.n_bands, Init::XavierUniform, rng)),
            Layer::Activation(Activation::new(ActivationKind::Tanh)),
        ]);
        let mut g = Self { arch, stem, blocks, head, training: true };
        for b in &mut g.blocks {
            if let Some(Layer::BatchNorm(bn)) = b.main.layers.get_mut(4) {
                bn.gamma.fill(0.0);
            }
        }
        if let Layer::Linear(l) = &mut g.head.layers[0] {
            l.weight.data_mut().iter_mut().for_each(|w| *w *= HEAD_INIT_GAIN);
        }
        Ok(g)
    }

    pub fn arch(&self) -> &GeneratorArch {
        &self.arch
    }

    pub fn n_bands(&self) -> usize {
        self.arch.n_bands
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.stem.layers.iter().chain(self.blocks.iter().flat_map(|b| b.layers())).chain(self.head.layers.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.stem
            .layers
            .iter_mut()
            .chain(self.blocks.iter_mut().flat_map(|b| b.layers_mut()))
            .chain(self.head.layers.iter_mut())
    }

    pub fn to_text(&self) -> String {
        let mut out = WeightsHeader { role: GENERATOR_ROLE.into(), n_bands: self.arch.n_bands }.line();
        let blocks = if self.arch.blocks.is_empty() { "-".to_string() } else { self.arch.encode() };
        writeln!(out, "arch {} {}", self.arch.stem_dim, blocks).unwrap();
        writeln!(out, "mode {}", mode_name(self.training)).unwrap();
        nn::write_layers(&mut out, self.layers());
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GanError> {
        let mut r = WeightsReader::new(text);
        let header = r.header()?;
        check_role(&header, GENERATOR_ROLE)?;
        let t = r.expect("arch")?;
        let arch = match t.as_slice() {
            [stem, blocks] => GeneratorArch::decode(header.n_bands, stem, blocks),
            _ => None,
        }
        .ok_or_else(|| r.error("malformed generator arch line"))?;
        let training = read_mode(&mut r)?;
        let mut g = Self::new(arch, &mut seed::rng(0))?;
        nn::read_layers(&mut r, g.layers_mut())?;
        r.expect("end")?;
        g.set_training(training);
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GanError> {
        write_file(path, &self.to_text())
    }

    /// Loads a generator, failing if its band count differs from `n_bands`.
    pub fn load(path: &Path, n_bands: usize) -> Result<Self, GanError> {
        let g = Self::from_text(&read_file(path)?)?;
        if g.n_bands() != n_bands {
            return Err(GanError::BandMismatch { expected: n_bands, found: g.n_bands() });
        }
        Ok(g)
    }
}

impl Module for GeneratorNet {
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        if x.cols() != self.arch.n_bands {
            return Err(NnError::Shape { op: "generator", left: x.shape(), right: (x.rows(), self.arch.n_bands) });
        }
        let mut h = self.stem.forward(x)?;
        for b in &mut self.blocks {
            h = b.forward(&h)?;
        }
        self.head.forward(&h)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        let mut g = self.head.backward(grad)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.stem.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.layers_mut().for_each(|l| l.visit_params(f));
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
        self.layers_mut().for_each(|l| l.set_training(training));
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.layers_mut().for_each(|l| l.set_requires_grad(on));
    }

    fn freeze_dropout(&mut self, _frozen: bool) {}
}

/// `Linear(2n→64) → LeakyReLU → Dropout → BN → Linear(64→128) → LeakyReLU →
/// Dropout → Linear(128→64) → LeakyReLU → Dropout → Linear(64→1) → sigmoid`.
#[derive(Debug, Clone)]
pub struct DiscriminatorNet {
    n_bands: usize,
    pub stack: Sequential,
    training: bool,
}

impl DiscriminatorNet {
    pub fn new(n_bands: usize, rng: &mut Rng) -> Result<Self, GanError> {
        if n_bands == 0 {
            return Err(GanError::Config("discriminator needs at least one band".into()));
        }
        let mut drop = || Layer::Dropout(Dropout::new(DISCRIMINATOR_DROPOUT, seed::rng(rand::Rng::random(rng))));
        let d1 = drop();
        let d2 = drop();
        let d3 = drop();
        let leaky = || Layer::Activation(Activation::new(ActivationKind::LeakyRelu(LEAKY_SLOPE)));
        let stack = Sequential::new(vec![
            Layer::Linear(Linear::new(2 * n_bands, 64, leaky_init(), rng)),
            leaky(),
            d1,
            Layer::BatchNorm(BatchNorm::new(64)),
            Layer::Linear(Linear::new(64, 128, leaky_init(), rng)),
            leaky(),
            d2,
            Layer::Linear(Linear::new(128, 64, leaky_init(), rng)),
            leaky(),
            d3,
            Layer::Linear(Linear::new(64, 1, Init::XavierUniform, rng)),
            Layer::Activation(Activation::new(ActivationKind::Sigmoid)),
        ]);
        Ok(Self { n_bands, stack, training: true })
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Probability that `bare` is a real bare-soil spectrum given `veg`.
    pub fn score(&mut self, veg: &Matrix, bare: &Matrix) -> Result<Matrix, NnError> {
        if veg.cols() != self.n_bands || bare.cols() != self.n_bands {
            return Err(NnError::Shape { op: "discriminator", left: veg.shape(), right: bare.shape() });
        }
        self.stack.forward(&veg.hconcat(bare)?)
    }

    /// Backward of [`Self::score`]; returns `(d veg, d bare)`.
    pub fn score_backward(&mut self, grad: &Matrix) -> Result<(Matrix, Matrix), NnError> {
        let g = self.stack.backward(grad)?;
        Ok(g.split_cols(self.n_bands))
    }

    pub fn to_text(&self) -> String {
        let mut out = WeightsHeader { role: DISCRIMINATOR_ROLE.into(), n_bands: self.n_bands }.line();
        writeln!(out, "mode {}", mode_name(self.training)).unwrap();
        nn::write_layers(&mut out, &self.stack.layers);
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GanError> {
        let mut r = WeightsReader::new(text);
        let header = r.header()?;
        check_role(&header, DISCRIMINATOR_ROLE)?;
        let training = read_mode(&mut r)?;
        let mut d = Self::new(header.n_bands, &mut seed::rng(0))?;
        nn::read_layers(&mut r, d.stack.layers.iter_mut())?;
        r.expect("end")?;
        d.set_training(training);
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), GanError> {
        write_file(path, &self.to_text())
    }

    pub fn load(path: &Path, n_bands: usize) -> Result<Self, GanError> {
        let d = Self::from_text(&read_file(path)?)?;
        if d.n_bands() != n_bands {
            return Err(GanError::BandMismatch { expected: n_bands, found: d.n_bands() });
        }
        Ok(d)
    }
}

impl Module for DiscriminatorNet {
    /// Input is the already concatenated `[veg | bare]` matrix.
    fn forward(&mut self, x: &Matrix) -> Result<Matrix, NnError> {
        self.stack.forward(x)
    }

    fn backward(&mut self, grad: &Matrix) -> Result<Matrix, NnError> {
        self.stack.backward(grad)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        self.stack.visit_params(f)
    }

    fn set_training(&mut self, training: bool) {
        self.training = training;
        self.stack.set_training(training)
    }

    fn set_requires_grad(&mut self, on: bool) {
        self.stack.set_requires_grad(on)
    }

    fn freeze_dropout(&mut self, frozen: bool) {
        self.stack.freeze_dropout(frozen)
    }
}

fn mode_name(training: bool) -> &'static str {
    if training {
        "training"
    } else {
        "inference"
    }
}

fn read_mode(r: &mut WeightsReader<'_>) -> Result<bool, GanError> {
    let t = r.expect("mode")?;
    match t.as_slice() {
        ["training"] => Ok(true),
        ["inference"] => Ok(false),
        _ => Err(r.error("mode must be `training` or `inference`").into()),
    }
}

fn check_role(header: &WeightsHeader, expected: &str) -> Result<(), GanError> {
    if header.role != expected {
        return Err(GanError::Role { expected: expected.into(), found: header.role.clone() });
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), GanError> {
    fs::write(path, text).map_err(|source| GanError::Io { path: path.display().to_string(), source })
}

fn read_file(path: &Path) -> Result<String, GanError> {
    fs::read_to_string(path).map_err(|source| GanError::Io { path: path.display().to_string(), source })
}

/// Discriminator loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorLoss {
    pub real: f64,
    pub fake: f64,
    pub total: f64,
}

fn constant_like(m: &Matrix, v: f64) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), vec![v; m.data().len()]).expect("same shape")
}

/// `real = -mean log D(real)`, `fake = -mean log(1 - D(fake))`, `total = real + fake`.
pub fn d_loss(real_scores: &Matrix, fake_scores: &Matrix) -> Result<DiscriminatorLoss, NnError> {
    let (real, _) = bce_loss(real_scores, &constant_like(real_scores, 1.0))?;
    let (fake, _) = bce_loss(fake_scores, &constant_like(fake_scores, 0.0))?;
    Ok(DiscriminatorLoss { real, fake, total: real + fake })
}

/// `-mean log D(fake)`.
pub fn g_loss(fake_scores: &Matrix) -> Result<f64, NnError> {
    Ok(bce_loss(fake_scores, &constant_like(fake_scores, 1.0))?.0)
}

/// Adversarial generator loss plus `l1_weight * mean |generated - target|`.
pub fn generator_objective(
    fake_scores: &Matrix,
    generated: &Matrix,
    target: &Matrix,
    l1_weight: f64,
) -> Result<f64, NnError> {
    let adv = g_loss(fake_scores)?;
    if l1_weight == 0.0 {
        return Ok(adv);
    }
    let diff = generated.zip_map(target, "l1", |a, b| (a - b).abs())?;
    Ok(adv + l1_weight * diff.mean())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub l1_weight: f64,
    pub d_steps_per_g_step: usize,
    pub arch_blocks: Option<Vec<(usize, usize)>>,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 42,
            l1_weight: 0.0,
            d_steps_per_g_step: 1,
            arch_blocks: None,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.batch_size < 2 {
            return Err(GanError::Config("batch size must be at least 2".into()));
        }
        if !(self.lr > 0.0) || !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(GanError::Config("learning rate and betas must be positive (betas below 1)".into()));
        }
        if !(self.l1_weight >= 0.0) {
            return Err(GanError::Config("l1 weight must be non-negative".into()));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(GanError::Config("need at least one discriminator step per generator step".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn arch(&self, n_bands: usize) -> GeneratorArch {
        let mut arch = GeneratorArch::new(n_bands);
        if let Some(blocks) = &self.arch_blocks {
            arch.blocks = blocks.clone();
        }
        arch
    }
}

/// Per-epoch means of the batch losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLossReport {
    pub epoch: usize,
    pub loss_d_real: f64,
    pub loss_d_fake: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    /// Mean L1 reconstruction term (reported even when its weight is 0).
    pub loss_l1: f64,
    pub d_real_score_mean: f64,
    pub d_fake_score_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLosses {
    pub d: DiscriminatorLoss,
    pub g: f64,
    pub l1: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
}

/// Normalized `(veg, bare)` matrices of a pair set.
pub fn pair_matrices(pairs: &[PairedRecord]) -> Result<(Matrix, Matrix), GanError> {
    let n_bands = pairs.first().map_or(0, |p| p.veg.n_bands());
    let mut veg = Vec::with_capacity(pairs.len() * n_bands);
    let mut bare = Vec::with_capacity(pairs.len() * n_bands);
    for p in pairs {
        if p.veg.n_bands() != n_bands || p.bare_target.n_bands() != n_bands {
            return Err(SpectralError::BandCount { expected: n_bands, got: p.veg.n_bands() }.into());
        }
        veg.extend_from_slice(normalize_reflectance(&p.veg).0.values());
        bare.extend_from_slice(normalize_reflectance(&p.bare_target).0.values());
    }
    Ok((Matrix::from_vec(pairs.len(), n_bands, veg)?, Matrix::from_vec(pairs.len(), n_bands, bare)?))
}

/// Alternating optimisation state.
pub struct GanTrainer {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    opt_g: Adam,
    opt_d: Adam,
    cfg: GanTrainConfig,
}

impl GanTrainer {
    pub fn new(n_bands: usize, cfg: GanTrainConfig) -> Result<Self, GanError> {
        cfg.validate()?;
        let generator = GeneratorNet::new(cfg.arch(n_bands), &mut seed::stream(cfg.seed, "gan-generator-init"))?;
        let discriminator = DiscriminatorNet::new(n_bands, &mut seed::stream(cfg.seed, "gan-discriminator-init"))?;
        let adam = cfg.adam();
        Ok(Self { generator, discriminator, opt_g: Adam::new(adam), opt_d: Adam::new(adam), cfg })
    }

    /// Generator forward in training mode; the result is the fake batch used
    /// by both steps.
    pub fn generate(&mut self, veg: &Matrix) -> Result<Matrix, NnError> {
        self.generator.set_training(true);
        self.generator.forward(veg)
    }

    /// One discriminator update on real pairs versus fixed generated
    /// spectra. Generator gradients are not touched.
    pub fn d_step(&mut self, veg: &Matrix, bare: &Matrix, fake: &Matrix) -> Result<(DiscriminatorLoss, f64, f64), NnError> {
        let d = &mut self.discriminator;
        d.set_training(true);
        d.zero_grad();
        let real_scores = d.score(veg, bare)?;
        let (real, g_real) = bce_loss(&real_scores, &constant_like(&real_scores, 1.0))?;
        d.score_backward(&g_real)?;
        let fake_scores = d.score(veg, fake)?;
        let (fake_l, g_fake) = bce_loss(&fake_scores, &constant_like(&fake_scores, 0.0))?;
        d.score_backward(&g_fake)?;
        self.opt_d.step(d);
        Ok((DiscriminatorLoss { real, fake: fake_l, total: real + fake_l }, real_scores.mean(), fake_scores.mean()))
    }

    /// One generator update through a frozen discriminator. Must follow
    /// [`Self::generate`] on the same batch. Discriminator gradient buffers
    /// are left as they were.
    pub fn g_step(&mut self, veg: &Matrix, bare: &Matrix, fake: &Matrix) -> Result<(f64, f64), NnError> {
        self.generator.zero_grad();
        let d = &mut self.discriminator;
        d.set_requires_grad(false);
        let backward = d.score(veg, fake).and_then(|s| {
            let (adv, gs) = bce_loss(&s, &constant_like(&s, 1.0))?;
            let (_, g_fake) = d.score_backward(&gs)?;
            Ok((adv, g_fake))
        });
        d.set_requires_grad(true);
        let (adv, mut g_fake) = backward?;

        let n = fake.data().len() as f64;
        let diff = fake.zip_map(bare, "l1", |a, b| a - b)?;
        let l1 = diff.data().iter().map(|d| d.abs()).sum::<f64>() / n;
        if self.cfg.l1_weight > 0.0 {
            let w = self.cfg.l1_weight / n;
            g_fake.data_mut().iter_mut().zip(diff.data()).for_each(|(g, d)| *g += w * d.signum());
        }
        self.generator.backward(&g_fake)?;
        self.opt_g.step(&mut self.generator);
        Ok((adv, l1))
    }

    pub fn train_batch(&mut self, veg: &Matrix, bare: &Matrix) -> Result<BatchLosses, NnError> {
        let fake = self.generate(veg)?;
        let mut last = None;
        for _ in 0..self.cfg.d_steps_per_g_step {
            last = Some(self.d_step(veg, bare, &fake)?);
        }
        let (d, real_mean, fake_mean) = last.expect("at least one discriminator step");
        let (g, l1) = self.g_step(veg, bare, &fake)?;
        Ok(BatchLosses { d, g, l1, real_mean, fake_mean })
    }

    pub fn finish(mut self) -> (GeneratorNet, DiscriminatorNet) {
        self.generator.set_training(false);
        self.discriminator.set_training(false);
        (self.generator, self.discriminator)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub history: Vec<GanLossReport>,
}

/// Trains on paired spectra. Each epoch shuffles the pairs, walks them in
/// batches (a trailing batch of one is skipped) and alternates
/// discriminator and generator steps. Both networks come back in inference
/// mode.
pub fn train(pairs: &[PairedRecord], cfg: &GanTrainConfig) -> Result<TrainedGan, GanError> {
    cfg.validate()?;
    if pairs.len() < cfg.batch_size {
        return Err(GanError::Config(format!("{} pairs is fewer than one batch of {}", pairs.len(), cfg.batch_size)));
    }
    let (veg, bare) = pair_matrices(pairs)?;
    let mut trainer = GanTrainer::new(veg.cols(), cfg.clone())?;
    let mut shuffle = seed::stream(cfg.seed, "gan-shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut acc = [0.0f64; 7];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let losses = trainer.train_batch(&veg.select_rows(chunk), &bare.select_rows(chunk))?;
            let vals = [losses.d.real, losses.d.fake, losses.g, losses.l1, losses.real_mean, losses.fake_mean];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(GanError::NonFinite { epoch, batch: b + 1 });
            }
            acc.iter_mut().zip(vals).for_each(|(a, v)| *a += v);
            batches += 1;
        }
        let m = |i: usize| acc[i] / batches as f64;
        let (real, fake) = (m(0), m(1));
        history.push(GanLossReport {
            epoch,
            loss_d_real: real,
            loss_d_fake: fake,
            loss_d: real + fake,
            loss_g: m(2),
            loss_l1: m(3),
            d_real_score_mean: m(4),
            d_fake_score_mean: m(5),
        });
        if epoch % 20 == 0 || epoch == cfg.epochs {
            log::info!("epoch {epoch}: loss_d {:.4} loss_g {:.4} l1 {:.4}", real + fake, m(2), m(3));
        }
    }
    let (generator, discriminator) = trainer.finish();
    Ok(TrainedGan { generator, discriminator, history })
}

/// `denormalize(G(normalize(b)))` for each spectrum.
pub fn reconstruct(g: &mut GeneratorNet, spectra: &[BandVector]) -> Result<Vec<BandVector>, GanError> {
    if g.is_training() {
        return Err(GanError::NotInference);
    }
    if spectra.is_empty() {
        return Ok(Vec::new());
    }
    let rows: Vec<Vec<f64>> = spectra.iter().map(|b| normalize_reflectance(b).0.into_inner()).collect();
    let out = g.forward(&Matrix::from_rows(&rows)?)?;
    out.iter_rows()
        .map(|r| Ok(denormalize_reflectance(&BandVector::new(r.to_vec())?)))
        .collect()
}

pub const LOSS_HISTORY_HEADER: &str = "epoch,loss_d_real,loss_d_fake,loss_d,loss_g,d_real_mean,d_fake_mean";

pub fn write_loss_history(path: &Path, history: &[GanLossReport]) -> Result<(), GanError> {
    let mut out = String::from(LOSS_HISTORY_HEADER);
    out.push('\n');
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            h.epoch, h.loss_d_real, h.loss_d_fake, h.loss_d, h.loss_g, h.d_real_score_mean, h.d_fake_score_mean
        )
        .unwrap();
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckOptions};
    use rand::Rng as _;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn generator_output_shape_and_range() {
        let mut rng = seed::rng(1);
        let mut g = GeneratorNet::new(GeneratorArch::new(7), &mut rng).unwrap();
        let x = random_matrix(5, 7, &mut rng);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), (5, 7));
        assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        g.set_training(false);
        let a = g.forward(&x).unwrap();
        assert_eq!(a, g.forward(&x).unwrap());
        assert!(g.forward(&random_matrix(2, 6, &mut rng)).is_err());
    }

    #[test]
    fn residual_block_with_zero_main_path_is_skip() {
        let mut rng = seed::rng(2);
        let x = random_matrix(4, 64, &mut rng);
        let mut same = ResidualBlock::new(64, 64, &mut rng);
        same.zero_main_path();
        assert_eq!(same.forward(&x).unwrap(), x);

        let mut proj = ResidualBlock::new(64, 128, &mut rng);
        proj.zero_main_path();
        let y = proj.forward(&x).unwrap();
        assert_eq!(y.shape(), (4, 128));
        let Some(Layer::Linear(p)) = &mut proj.skip else { panic!("projection expected") };
        assert_eq!(y, p.forward(&x).unwrap());
    }

    /// Moves every parameter off its structured initial value.
    fn jitter<M: Module>(m: &mut M, rng: &mut Rng) {
        m.visit_params(&mut |p, _| p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3)));
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut rng = seed::rng(3);
        let mut g = GeneratorNet::new(GeneratorArch::new(7), &mut rng).unwrap();
        jitter(&mut g, &mut rng);
        let x = random_matrix(4, 7, &mut rng);
        let opts = GradCheckOptions { max_coords_per_tensor: Some(12), ..Default::default() };
        let r = grad_check(&mut g, &x, &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn discriminator_output_and_order_sensitivity() {
        let mut rng = seed::rng(4);
        let mut d = DiscriminatorNet::new(7, &mut rng).unwrap();
        d.set_training(false);
        let a = random_matrix(6, 7, &mut rng);
        let b = random_matrix(6, 7, &mut rng);
        let s = d.score(&a, &b).unwrap();
        assert_eq!(s.shape(), (6, 1));
        assert!(s.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_ne!(s, d.score(&b, &a).unwrap());
    }

    #[test]
    fn discriminator_gradients_with_frozen_dropout() {
        let mut rng = seed::rng(5);
        let mut d = DiscriminatorNet::new(7, &mut rng).unwrap();
        let x = random_matrix(6, 14, &mut rng);
        d.forward(&x).unwrap();
        d.freeze_dropout(true);
        let opts = GradCheckOptions { max_coords_per_tensor: Some(16), ..Default::default() };
        let r = grad_check(&mut d, &x, &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn loss_values() {
        let half = Matrix::from_vec(3, 1, vec![0.5; 3]).unwrap();
        let l = d_loss(&half, &half).unwrap();
        assert!((l.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.total, l.real + l.fake);
        assert!((g_loss(&half).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let ones = Matrix::from_vec(3, 1, vec![1.0; 3]).unwrap();
        let zeros = Matrix::from_vec(3, 1, vec![0.0; 3]).unwrap();
        assert!(d_loss(&ones, &zeros).unwrap().total < 1e-6);
        assert!(g_loss(&ones).unwrap() < 1e-6);

        let gen = Matrix::from_rows(&[[0.1, 0.2]]).unwrap();
        let s = Matrix::from_vec(1, 1, vec![0.3]).unwrap();
        assert_eq!(generator_objective(&s, &gen, &gen, 1.0).unwrap(), g_loss(&s).unwrap());
    }

    #[test]
    fn d_loss_matches_direct_formula() {
        let mut rng = seed::rng(6);
        for _ in 0..100 {
            let n = rng.random_range(1..20);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
            let want_real = -r.iter().map(|s| s.ln()).sum::<f64>() / n as f64;
            let want_fake = -f.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / n as f64;
            let l = d_loss(&Matrix::from_vec(n, 1, r).unwrap(), &Matrix::from_vec(n, 1, f).unwrap()).unwrap();
            assert!((l.real - want_real).abs() < 1e-12);
            assert!((l.fake - want_fake).abs() < 1e-12);
            assert!((l.total - (want_real + want_fake)).abs() < 1e-12);
        }
    }

    #[test]
    fn steps_do_not_leak_gradients() {
        let mut rng = seed::rng(7);
        let mut t = GanTrainer::new(7, GanTrainConfig { batch_size: 8, ..Default::default() }).unwrap();
        let veg = random_matrix(8, 7, &mut rng);
        let bare = random_matrix(8, 7, &mut rng);
        let fake = t.generate(&veg).unwrap();

        let g_before = t.generator.grads_snapshot();
        t.d_step(&veg, &bare, &fake).unwrap();
        assert_eq!(t.generator.grads_snapshot(), g_before);

        let d_before = t.discriminator.grads_snapshot();
        assert!(d_before.iter().any(|g| *g != 0.0));
        t.g_step(&veg, &bare, &fake).unwrap();
        assert_eq!(t.discriminator.grads_snapshot(), d_before);
        assert!(t.generator.grads_snapshot().iter().any(|g| *g != 0.0));
    }

    fn toy_pairs(n: usize) -> Vec<PairedRecord> {
        let mut rng = seed::rng(8);
        (0..n)
            .map(|i| {
                let bare: Vec<f64> = (0..7).map(|_| rng.random_range(0.1..0.4)).collect();
                let veg: Vec<f64> = bare.iter().map(|b| 0.5 * b + 0.1).collect();
                PairedRecord {
                    veg: BandVector::new(veg).unwrap(),
                    bare_target: BandVector::new(bare).unwrap(),
                    soc: 10.0,
                    veg_id: format!("v{i}"),
                    bare_ids: vec![format!("b{i}")],
                    pair_distance: 0.0,
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let cfg = GanTrainConfig { epochs: 0, batch_size: 4, ..Default::default() };
        let t = train(&toy_pairs(8), &cfg).unwrap();
        assert!(t.history.is_empty());
        let mut init = GeneratorNet::new(cfg.arch(7), &mut seed::stream(cfg.seed, "gan-generator-init")).unwrap();
        init.set_training(false);
        assert_eq!(t.generator.to_text(), init.to_text());
    }

    #[test]
    fn training_is_deterministic_and_consistent() {
        let cfg = GanTrainConfig { epochs: 3, batch_size: 8, l1_weight: 1.0, ..Default::default() };
        let pairs = toy_pairs(30);
        let a = train(&pairs, &cfg).unwrap();
        let b = train(&pairs, &cfg).unwrap();
        assert_eq!(a.generator.to_text(), b.generator.to_text());
        assert_eq!(a.discriminator.to_text(), b.discriminator.to_text());
        assert_eq!(a.history.len(), 3);
        for h in &a.history {
            assert!((h.loss_d - (h.loss_d_real + h.loss_d_fake)).abs() <= 1e-12);
        }
        assert!(!a.generator.is_training());
        assert!(train(&pairs[..4], &cfg).is_err());
    }

    #[test]
    fn reconstruct_bounds_and_single_sample() {
        let mut rng = seed::rng(9);
        let mut g = GeneratorNet::new(GeneratorArch::new(7), &mut rng).unwrap();
        let one = vec![BandVector::new(vec![0.2; 7]).unwrap()];
        assert!(matches!(reconstruct(&mut g, &one), Err(GanError::NotInference)));
        g.set_training(false);
        let out = reconstruct(&mut g, &one).unwrap();
        assert_eq!(out.len(), 1);
        let many: Vec<BandVector> =
            (0..50).map(|_| BandVector::new((0..7).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()).collect();
        for b in reconstruct(&mut g, &many).unwrap() {
            assert!(b.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        let cfg = GanTrainConfig { epochs: 2, batch_size: 8, ..Default::default() };
        let mut t = train(&toy_pairs(16), &cfg).unwrap();
        let text = t.generator.to_text();
        let mut loaded = GeneratorNet::from_text(&text).unwrap();
        assert_eq!(loaded.to_text(), text);
        let probe = random_matrix(5, 7, &mut seed::rng(10));
        let a = t.generator.forward(&probe).unwrap();
        let b = loaded.forward(&probe).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let dtext = t.discriminator.to_text();
        assert_eq!(DiscriminatorNet::from_text(&dtext).unwrap().to_text(), dtext);
        assert!(matches!(GeneratorNet::from_text(&dtext), Err(GanError::Role { .. })));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.weights");
        t.generator.save(&p).unwrap();
        assert!(matches!(GeneratorNet::load(&p, 6), Err(GanError::BandMismatch { expected: 6, found: 7 })));
        assert_eq!(GeneratorNet::load(&p, 7).unwrap().to_text(), text);
    }
}
