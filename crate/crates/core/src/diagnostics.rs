//! Finite-difference gradient checks over every differentiable component.

use std::time::Instant;

use rand::Rng as _;

use crate::gan::{DiscriminatorNet, GanError, GeneratorArch, GeneratorNet, ResidualBlock};
use crate::nn::{
    bce_loss, grad_check, grad_check_fn, mse_loss, Activation, ActivationKind, BatchNorm, GradCheckOptions,
    GradCheckReport, Init, Linear, Matrix, Module, NnError,
};
use crate::seed::{self, Rng};

/// Largest relative error a component may show.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCheck {
    pub component: String,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_CHECK_TOLERANCE
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("consistent shape")
}

/// Values bounded away from zero so no sample sits on an activation kink.
fn off_kink(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = random_matrix(rows, cols, rng);
    m.data_mut().iter_mut().for_each(|v| *v = v.signum() * (0.1 + 1.9 * v.abs()));
    m
}

fn jitter<M: Module + ?Sized>(m: &mut M, rng: &mut Rng) {
    m.visit_params(&mut |p, _| p.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3)));
}

/// Runs the whole suite. `corrupt_linear` perturbs the dense layer's
/// backward pass so callers can confirm the harness notices.
pub fn grad_check_suite(seed_value: u64, corrupt_linear: bool) -> Result<Vec<ComponentCheck>, GanError> {
    let mut rng = seed::stream(seed_value, "grad-check-suite");
    let full = GradCheckOptions { seed: seed_value, ..Default::default() };
    let sampled = |k| GradCheckOptions { max_coords_per_tensor: Some(k), ..full };
    let mut out = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut() -> Result<GradCheckReport, NnError>| -> Result<(), NnError> {
        let t = Instant::now();
        let report = f()?;
        out.push(ComponentCheck { component: name.to_string(), report, seconds: t.elapsed().as_secs_f64() });
        Ok(())
    };

    let mut linear = Linear::new(5, 4, Init::XavierUniform, &mut rng);
    jitter(&mut linear, &mut rng);
    if corrupt_linear {
        linear.grad_fault = 1.01;
    }
    let x = random_matrix(6, 5, &mut rng);
    run("linear", &mut || grad_check(&mut linear, &x, &full))?;

    let mut bn = BatchNorm::new(4);
    jitter(&mut bn, &mut rng);
    let x = random_matrix(6, 4, &mut rng);
    run("batch_norm", &mut || grad_check(&mut bn, &x, &full))?;

    for kind in [ActivationKind::Relu, ActivationKind::LeakyRelu(0.2), ActivationKind::Tanh, ActivationKind::Sigmoid] {
        let mut act = Activation::new(kind);
        let x = off_kink(4, 5, &mut rng);
        run(&kind.name(), &mut || grad_check(&mut act, &x, &full))?;
    }

    let scores: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.95)).collect();
    let targets: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    run("bce", &mut || {
        let t = Matrix::from_vec(8, 1, targets.clone())?;
        Ok(grad_check_fn(
            |s| {
                let m = Matrix::from_vec(8, 1, s.to_vec()).expect("shape");
                let (l, g) = bce_loss(&m, &t).expect("shape");
                (l, g.into_data())
            },
            &scores,
            &full,
        ))
    })?;

    let pred: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    run("mse", &mut || {
        let t = Matrix::from_vec(4, 2, target.clone())?;
        Ok(grad_check_fn(
            |p| {
                let m = Matrix::from_vec(4, 2, p.to_vec()).expect("shape");
                let (l, g) = mse_loss(&m, &t).expect("shape");
                (l, g.into_data())
            },
            &pred,
            &full,
        ))
    })?;

    let mut identity_block = ResidualBlock::new(16, 16, &mut rng);
    jitter(&mut identity_block, &mut rng);
    let x = random_matrix(5, 16, &mut rng);
    run("residual_block", &mut || grad_check(&mut identity_block, &x, &sampled(24)))?;

    let mut proj_block = ResidualBlock::new(16, 24, &mut rng);
    jitter(&mut proj_block, &mut rng);
    run("residual_block_projection", &mut || grad_check(&mut proj_block, &x, &sampled(24)))?;

    let mut generator = GeneratorNet::new(GeneratorArch::new(7), &mut rng)?;
    jitter(&mut generator, &mut rng);
    let x = random_matrix(6, 7, &mut rng);
    run("generator", &mut || grad_check(&mut generator, &x, &sampled(12)))?;

    let mut disc = DiscriminatorNet::new(7, &mut rng)?;
    let x = random_matrix(6, 14, &mut rng);
    disc.set_training(true);
    disc.forward(&x)?;
    disc.freeze_dropout(true);
    run("discriminator_frozen_dropout", &mut || grad_check(&mut disc, &x, &sampled(16)))?;

    Ok(out)
}
