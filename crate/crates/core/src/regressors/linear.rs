use nalgebra::{DMatrix, DVector};

use super::{check_cols, push_line, FeatureMatrix, RegressError, Standardizer, TargetScale};

/// Ridge added to the normal equations for conditioning.
pub const LR_RIDGE: f64 = 1e-10;

/// Ordinary least squares on standardized features and target.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub scaler: Standardizer,
    pub target: TargetScale,
    /// Coefficients in standardized units; zero for dropped columns.
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], standardize: bool) -> Result<Self, RegressError> {
        if x.rows() == 0 {
            return Err(RegressError::TooFewRows { kind: "lr", need: 1, got: 0 });
        }
        let scaler = if standardize { Standardizer::fit(x) } else { Standardizer::identity(x.cols()) };
        let target = if standardize { TargetScale::fit(y) } else { TargetScale { mean: 0.0, std: 1.0 } };
        let dropped = Standardizer::fit(x).constant;
        for &j in &dropped {
            log::warn!("feature `{}` has zero variance and is dropped", x.names()[j]);
        }
        let kept: Vec<usize> = (0..x.cols()).filter(|j| !dropped.contains(j)).collect();

        // Design: intercept column followed by the kept features.
        let p = kept.len() + 1;
        let mut row = vec![0.0; x.cols()];
        let a = DMatrix::from_fn(x.rows(), p, |i, c| {
            if c == 0 {
                1.0
            } else {
                scaler.apply_row(x.row(i), &mut row);
                row[kept[c - 1]]
            }
        });
        let b = DVector::from_iterator(y.len(), y.iter().map(|v| target.forward(*v)));
        let mut ata = a.tr_mul(&a);
        for d in 0..p {
            ata[(d, d)] += LR_RIDGE;
        }
        let atb = a.tr_mul(&b);
        let sol = match ata.clone().cholesky() {
            Some(c) => c.solve(&atb),
            None => ata.svd(true, true).solve(&atb, 1e-14).map_err(|_| RegressError::Singular)?,
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(RegressError::Singular);
        }
        let mut beta = vec![0.0; x.cols()];
        for (c, &j) in kept.iter().enumerate() {
            beta[j] = sol[c + 1];
        }
        Ok(Self { scaler, target, beta, intercept: sol[0] })
    }

    /// `(slopes, intercept)` in the original feature and target units.
    pub fn coefficients(&self) -> (Vec<f64>, f64) {
        let s = self.target.std;
        let slopes: Vec<f64> = self.beta.iter().zip(&self.scaler.std).map(|(b, sd)| s * b / sd).collect();
        let shift: f64 = slopes.iter().zip(&self.scaler.mean).map(|(w, m)| w * m).sum();
        (slopes, s * self.intercept + self.target.mean - shift)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        check_cols(x, self.beta.len())?;
        let mut z = vec![0.0; x.cols()];
        Ok(x.iter_rows()
            .map(|r| {
                self.scaler.apply_row(r, &mut z);
                let v = self.intercept + z.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>();
                self.target.inverse(v)
            })
            .collect())
    }

    pub(super) fn dump(&self, out: &mut String) {
        self.scaler.dump(out);
        push_line(out, "target", &[self.target.mean, self.target.std]);
        push_line(out, "intercept", &[self.intercept]);
        push_line(out, "beta", &self.beta);
    }
}
