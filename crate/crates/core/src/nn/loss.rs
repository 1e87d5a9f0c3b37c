use super::{Matrix, NnError};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities against 0/1 targets, with the
/// gradient with respect to `scores`. The gradient is evaluated at the
/// clamped score so saturated outputs still receive a signal.
pub fn bce_loss(scores: &Matrix, targets: &Matrix) -> Result<(f64, Matrix), NnError> {
    scores.same_shape(targets, "bce")?;
    let n = scores.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    for ((g, &s), &t) in grad.data_mut().iter_mut().zip(scores.data()).zip(targets.data()) {
        let s = s.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= t * s.ln() + (1.0 - t) * (1.0 - s).ln();
        *g = -(t / s - (1.0 - t) / (1.0 - s)) / n;
    }
    Ok((loss / n, grad))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), NnError> {
    pred.same_shape(target, "mse")?;
    let n = pred.data().len() as f64;
    let diff = pred.zip_map(target, "mse", |p, t| p - t)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check_fn, GradCheckOptions};

    #[test]
    fn bce_at_half_is_ln2() {
        let s = Matrix::from_vec(4, 1, vec![0.5; 4]).unwrap();
        let t = Matrix::from_vec(4, 1, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let (l, _) = bce_loss(&s, &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_saturation_is_finite() {
        let s = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let t = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let (l, g) = bce_loss(&s, &t).unwrap();
        assert!(l.is_finite() && g.is_finite());
        assert!((l + BCE_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn mse_zero_when_equal() {
        let p = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let targets = [1.0, 0.0, 1.0, 0.0, 1.0];
        let scores = [0.3, 0.6, 0.9, 0.15, 0.52];
        let t = Matrix::from_vec(5, 1, targets.to_vec()).unwrap();
        let r = grad_check_fn(
            |x| {
                let (l, g) = bce_loss(&Matrix::from_vec(5, 1, x.to_vec()).unwrap(), &t).unwrap();
                (l, g.into_data())
            },
            &scores,
            &GradCheckOptions::default(),
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");

        let tgt = Matrix::from_vec(5, 1, vec![0.1, -0.4, 2.0, 0.0, 1.0]).unwrap();
        let r = grad_check_fn(
            |x| {
                let (l, g) = mse_loss(&Matrix::from_vec(5, 1, x.to_vec()).unwrap(), &tgt).unwrap();
                (l, g.into_data())
            },
            &scores,
            &GradCheckOptions::default(),
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
