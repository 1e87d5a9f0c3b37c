use rand::seq::index::sample;
use rand::Rng as _;

use super::{Matrix, Module, NnError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Check at most this many coordinates of each tensor (chosen at
    /// random); `None` checks every coordinate.
    pub max_coords_per_tensor: Option<usize>,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { h: 1e-5, max_coords_per_tensor: None, floor: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
    /// Where the worst disagreement occurred.
    pub worst: String,
}

impl GradCheckReport {
    fn new() -> Self {
        Self { max_rel_error: 0.0, n_checked: 0, worst: String::new() }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, at: impl FnOnce() -> String) {
        let e = relative_error(analytic, numeric, floor);
        self.n_checked += 1;
        if e > self.max_rel_error || e.is_nan() {
            self.max_rel_error = e;
            self.worst = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", at());
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn coords(len: usize, cap: Option<usize>, rng: &mut seed::Rng) -> Vec<usize> {
    match cap {
        Some(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

fn nudge<M: Module + ?Sized>(m: &mut M, tensor: usize, coord: usize, delta: f64) {
    let mut t = 0;
    m.visit_params(&mut |p, _| {
        if t == tensor {
            p[coord] += delta;
        }
        t += 1;
    });
}

/// Compares the module's backward pass against central differences of the
/// scalar `sum(r * forward(x))` for a fixed random `r`, over parameters and
/// inputs. The module must be deterministic (dropout off or frozen).
pub fn grad_check<M: Module + ?Sized>(
    module: &mut M,
    input: &Matrix,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NnError> {
    let mut rng = seed::stream(opts.seed, "grad-check");
    let out = module.forward(input)?;
    let proj = Matrix::from_vec(
        out.rows(),
        out.cols(),
        (0..out.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let loss = |m: &mut M, x: &Matrix| -> Result<f64, NnError> {
        let y = m.forward(x)?;
        Ok(y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    module.zero_grad();
    module.forward(input)?;
    let grad_input = module.backward(&proj)?;
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    module.visit_params(&mut |_, g| analytic.push(g.to_vec()));

    let h = opts.h;
    let mut report = GradCheckReport::new();
    for (t, grads) in analytic.iter().enumerate() {
        for c in coords(grads.len(), opts.max_coords_per_tensor, &mut rng) {
            nudge(module, t, c, h);
            let up = loss(module, input)?;
            nudge(module, t, c, -2.0 * h);
            let down = loss(module, input)?;
            nudge(module, t, c, h);
            report.record(grads[c], (up - down) / (2.0 * h), opts.floor, || format!("param tensor {t}[{c}]"));
        }
    }
    let mut x = input.clone();
    for c in coords(x.data().len(), opts.max_coords_per_tensor, &mut rng) {
        let orig = x.data()[c];
        x.data_mut()[c] = orig + h;
        let up = loss(module, &x)?;
        x.data_mut()[c] = orig - h;
        let down = loss(module, &x)?;
        x.data_mut()[c] = orig;
        report.record(grad_input.data()[c], (up - down) / (2.0 * h), opts.floor, || format!("input[{c}]"));
    }
    module.zero_grad();
    Ok(report)
}

/// Checks a scalar function that returns its own gradient.
pub fn grad_check_fn<F>(mut f: F, x: &[f64], opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    let mut report = GradCheckReport::new();
    let mut probe = x.to_vec();
    for c in 0..x.len() {
        probe[c] = x[c] + opts.h;
        let up = f(&probe).0;
        probe[c] = x[c] - opts.h;
        let down = f(&probe).0;
        probe[c] = x[c];
        report.record(analytic[c], (up - down) / (2.0 * opts.h), opts.floor, || format!("x[{c}]"));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Linear};

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = seed::rng(11);
        let mut l = Linear::new(4, 3, Init::XavierUniform, &mut rng);
        let x = Matrix::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        l.grad_fault = 1.01;
        let r = grad_check(&mut l, &x, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 1e-3, "{r:?}");
        assert!(r.worst.starts_with("param tensor 0"));
    }

    #[test]
    fn sampled_coordinates_are_bounded() {
        let mut rng = seed::rng(12);
        let mut l = Linear::new(10, 10, Init::XavierUniform, &mut rng);
        let x = Matrix::from_vec(2, 10, vec![0.3; 20]).unwrap();
        let opts = GradCheckOptions { max_coords_per_tensor: Some(5), ..Default::default() };
        let r = grad_check(&mut l, &x, &opts).unwrap();
        assert_eq!(r.n_checked, 5 + 5 + 5);
    }
}
