use super::{check_cols, FeatureMatrix, RegressError, Standardizer};
use crate::neighbors::{euclidean, k_nearest};

/// Mean target of the `k` Euclidean-nearest training rows. Equal
/// distances go to the lower training index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub scaler: Standardizer,
    train: FeatureMatrix,
    targets: Vec<f64>,
}

impl KnnModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], k: usize, standardize: bool) -> Result<Self, RegressError> {
        if k > x.rows() {
            return Err(RegressError::TooFewRows { kind: "knn", need: k, got: x.rows() });
        }
        let scaler = if standardize { Standardizer::fit(x) } else { Standardizer::identity(x.cols()) };
        let train = scaler.transform(x)?;
        Ok(Self { k, scaler, train, targets: y.to_vec() })
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        check_cols(x, self.train.cols())?;
        let q = self.scaler.transform(x)?;
        Ok(q.iter_rows()
            .map(|r| {
                let nn = k_nearest(self.train.iter_rows().map(|t| euclidean(r, t)), self.k);
                nn.iter().map(|n| self.targets[n.index]).sum::<f64>() / nn.len() as f64
            })
            .collect())
    }

    pub(super) fn dump(&self, out: &mut String) {
        self.scaler.dump(out);
        out.push_str(&format!("k {}\ntraining_rows {}\n", self.k, self.train.rows()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    #[test]
    fn exact_match_with_k1() {
        let x = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [5.0, 2.0]]).unwrap();
        let m = KnnModel::fit(&x, &[10.0, 20.0, 30.0], 1, true).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let x = FeatureMatrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let m = KnnModel::fit(&x, &[3.0, 9.0], 1, false).unwrap();
        assert_eq!(m.predict(&FeatureMatrix::from_rows(&[[0.0]]).unwrap()).unwrap(), vec![3.0]);
    }

    #[test]
    fn k_larger_than_rows_fails() {
        let x = FeatureMatrix::from_rows(&[[0.0]]).unwrap();
        assert!(KnnModel::fit(&x, &[1.0], 2, true).is_err());
    }

    #[test]
    fn matches_sorting_oracle() {
        let mut rng = seed::rng(4);
        let rows: Vec<[f64; 3]> =
            (0..100).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..10.0)).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let m = KnnModel::fit(&x, &y, 5, false).unwrap();
        let queries: Vec<[f64; 3]> =
            (0..30).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let got = m.predict(&FeatureMatrix::from_rows(&queries).unwrap()).unwrap();
        for (q, g) in queries.iter().zip(got) {
            let mut order: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (euclidean(q, r), i)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want = order[..5].iter().map(|(_, i)| y[*i]).sum::<f64>() / 5.0;
            assert_eq!(g, want);
        }
    }
}
