//! SOC regressors behind one fit/predict contract: least squares, KNN,
//! CART, random forest and a small MLP.

mod knn;
mod linear;
mod mlp;
mod tree;

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

pub use knn::KnnModel;
pub use linear::LinearModel;
pub use mlp::{MlpModel, MlpParams};
pub use tree::{ForestModel, MaxFeatures, Node, TreeModel, TreeParams};

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("feature matrix: {0}")]
    Shape(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{kind} needs at least {need} training rows, got {got}")]
    TooFewRows { kind: &'static str, need: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("linear system could not be solved")]
    Singular,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Dense row-major design matrix with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, names: Vec<String>) -> Result<Self, RegressError> {
        if data.len() != rows * cols {
            return Err(RegressError::Shape(format!("{} values for {rows}x{cols}", data.len())));
        }
        if names.len() != cols {
            return Err(RegressError::Shape(format!("{} names for {cols} columns", names.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RegressError::NonFinite { row: i / cols.max(1), col: i % cols.max(1) });
        }
        Ok(Self { rows, cols, data, names })
    }

    /// Builds from row slices with generated names `x1..xN`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, RegressError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let names = (1..=cols).map(|i| format!("x{i}")).collect();
        Self::from_named_rows(rows, names)
    }

    pub fn from_named_rows<R: AsRef<[f64]>>(rows: &[R], names: Vec<String>) -> Result<Self, RegressError> {
        let cols = names.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(RegressError::Shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data, names)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data, names: self.names.clone() }
    }
}

/// Per-column affine scaling fitted on training data. Zero-variance
/// columns are kept with unit scale and reported in `constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for r in x.iter_rows() {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        let mut constant = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * (1.0 + mean[j].abs()) {
                    sd
                } else {
                    constant.push(j);
                    1.0
                }
            })
            .collect();
        Self { mean, std, constant }
    }

    pub fn identity(cols: usize) -> Self {
        Self { mean: vec![0.0; cols], std: vec![1.0; cols], constant: Vec::new() }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, RegressError> {
        if x.cols() != self.mean.len() {
            return Err(RegressError::Shape(format!("{} columns, model expects {}", x.cols(), self.mean.len())));
        }
        let mut data = vec![0.0; x.data.len()];
        for (src, dst) in x.iter_rows().zip(data.chunks_mut(x.cols().max(1))) {
            self.apply_row(src, dst);
        }
        Ok(FeatureMatrix { rows: x.rows, cols: x.cols, data, names: x.names.clone() })
    }

    fn dump(&self, out: &mut String) {
        push_line(out, "mean", &self.mean);
        push_line(out, "std", &self.std);
    }
}

/// Mean/std scaling of a target vector (unit scale if constant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Self { mean, std: if sd > 1e-12 * (1.0 + mean.abs()) { sd } else { 1.0 } }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

fn push_line(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        write!(out, " {v:.16e}").unwrap();
    }
    out.push('\n');
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Lr,
    Knn,
    Dtree,
    Rforest,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::Knn, ModelKind::Dtree, ModelKind::Rforest, ModelKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Knn => "knn",
            ModelKind::Dtree => "dtree",
            ModelKind::Rforest => "rforest",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = RegressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RegressError::Config(format!("unknown model kind `{s}`")))
    }
}

/// Model choice and hyperparameters. [`FitSpec::new`] gives the defaults
/// for each kind.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub kind: ModelKind,
    pub standardize: bool,
    pub seed: u64,
    pub knn_k: usize,
    pub tree: TreeParams,
    pub n_trees: usize,
    /// Test hook: disable bootstrap resampling in the forest.
    pub bootstrap: bool,
    pub forest_max_features: MaxFeatures,
    pub mlp: MlpParams,
}

impl FitSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            standardize: !matches!(kind, ModelKind::Dtree | ModelKind::Rforest),
            seed: 42,
            knn_k: 5,
            tree: TreeParams::default(),
            n_trees: 100,
            bootstrap: true,
            forest_max_features: MaxFeatures::Third,
            mlp: MlpParams::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RegressError> {
        let bad = |what: &str| Err(RegressError::Config(format!("{what} must be positive")));
        if self.knn_k == 0 {
            return bad("knn k");
        }
        if self.n_trees == 0 {
            return bad("number of trees");
        }
        if self.tree.min_leaf == 0 {
            return bad("minimum leaf size");
        }
        self.mlp.validate()
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Lr(LinearModel),
    Knn(KnnModel),
    Dtree(TreeModel),
    Rforest(ForestModel),
    Mlp(MlpModel),
}

fn check_training(x: &FeatureMatrix, y: &[f64]) -> Result<(), RegressError> {
    if x.rows() != y.len() {
        return Err(RegressError::Shape(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite { row: i, col: x.cols() });
    }
    Ok(())
}

pub fn fit(x: &FeatureMatrix, y: &[f64], spec: &FitSpec) -> Result<FittedModel, RegressError> {
    spec.validate()?;
    check_training(x, y)?;
    Ok(match spec.kind {
        ModelKind::Lr => FittedModel::Lr(LinearModel::fit(x, y, spec.standardize)?),
        ModelKind::Knn => FittedModel::Knn(KnnModel::fit(x, y, spec.knn_k, spec.standardize)?),
        ModelKind::Dtree => FittedModel::Dtree(TreeModel::fit(x, y, &spec.tree)?),
        ModelKind::Rforest => FittedModel::Rforest(ForestModel::fit(
            x,
            y,
            spec.n_trees,
            &TreeParams { max_features: spec.forest_max_features, ..spec.tree },
            spec.bootstrap,
            spec.seed,
        )?),
        ModelKind::Mlp => FittedModel::Mlp(MlpModel::fit(x, y, &spec.mlp, spec.standardize, spec.seed)?),
    })
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Lr(_) => ModelKind::Lr,
            FittedModel::Knn(_) => ModelKind::Knn,
            FittedModel::Dtree(_) => ModelKind::Dtree,
            FittedModel::Rforest(_) => ModelKind::Rforest,
            FittedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        match self {
            FittedModel::Lr(m) => m.predict(x),
            FittedModel::Knn(m) => m.predict(x),
            FittedModel::Dtree(m) => m.predict(x),
            FittedModel::Rforest(m) => m.predict(x),
            FittedModel::Mlp(m) => m.predict(x),
        }
    }

    /// Versioned text description of the fitted model.
    pub fn dump(&self) -> String {
        let mut out = format!("reflectgan-model v1 {}\n", self.kind());
        match self {
            FittedModel::Lr(m) => m.dump(&mut out),
            FittedModel::Knn(m) => m.dump(&mut out),
            FittedModel::Dtree(m) => m.dump(&mut out),
            FittedModel::Rforest(m) => m.dump(&mut out),
            FittedModel::Mlp(m) => m.dump(&mut out),
        }
        out.push_str("end\n");
        out
    }
}

fn check_cols(x: &FeatureMatrix, want: usize) -> Result<(), RegressError> {
    if x.cols() != want {
        return Err(RegressError::Shape(format!("{} columns, model expects {want}", x.cols())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_matrix_rejects_bad_input() {
        assert!(FeatureMatrix::new(2, 2, vec![0.0; 3], vec!["a".into(), "b".into()]).is_err());
        assert!(FeatureMatrix::new(1, 2, vec![0.0; 2], vec!["a".into()]).is_err());
        assert!(matches!(
            FeatureMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0], vec!["a".into(), "b".into()]),
            Err(RegressError::NonFinite { row: 1, col: 0 })
        ));
        assert!(FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn standardizer_flags_constant_columns() {
        let x = FeatureMatrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&x);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.constant, vec![1]);
        let t = s.transform(&x).unwrap();
        assert_eq!(t.row(0), &[-1.0, 0.0]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svr".parse::<ModelKind>().is_err());
    }

    #[test]
    fn fit_checks_lengths() {
        let x = FeatureMatrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(fit(&x, &[1.0], &FitSpec::new(ModelKind::Lr)).is_err());
        let m = fit(&x, &[1.0, 2.0], &FitSpec::new(ModelKind::Dtree)).unwrap();
        assert!(m.dump().starts_with("reflectgan-model v1 dtree\n"));
        assert!(m.predict(&FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn data() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
            (5usize..40, 1usize..4).prop_flat_map(|(n, d)| {
                (
                    proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, d), n),
                    proptest::collection::vec(0.0f64..50.0, n),
                )
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn averaging_models_predict_within_the_target_range((rows, y) in data()) {
                let x = FeatureMatrix::from_rows(&rows).unwrap();
                let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
                for kind in [ModelKind::Knn, ModelKind::Dtree, ModelKind::Rforest] {
                    let mut spec = FitSpec::new(kind);
                    spec.n_trees = 10;
                    let m = fit(&x, &y, &spec).unwrap();
                    for p in m.predict(&x).unwrap() {
                        prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9, "{kind}: {p} outside [{lo}, {hi}]");
                    }
                }
            }
        }
    }
}
