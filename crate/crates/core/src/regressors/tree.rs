use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng as _;

use super::{check_cols, FeatureMatrix, RegressError};
use crate::seed::{self, Rng};

/// Candidate features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    All,
    /// `max(1, cols / 3)`.
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, cols: usize) -> usize {
        match self {
            MaxFeatures::All => cols,
            MaxFeatures::Third => (cols / 3).max(1),
            MaxFeatures::Count(k) => k.clamp(1, cols.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_leaf: 1, max_features: MaxFeatures::All }
    }
}

/// Preorder node list; a split's left child is the next node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { value: f64, n: usize },
    Split { feature: usize, threshold: f64, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Midpoint between two sorted distinct values that still separates them.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

/// Lowest summed squared error over all features in `features` (ascending)
/// and all midpoints; earlier feature and lower threshold win ties.
fn best_split(x: &FeatureMatrix, y: &[f64], idx: &[usize], features: &[usize], min_leaf: usize) -> Option<SplitChoice> {
    let n = idx.len();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    let tol = 1e-12 * idx.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum::<f64>();
    let mut best: Option<SplitChoice> = None;
    for &f in features {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x.get(i, f), y[i] - mean)));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let (mut s, mut q) = (0.0, 0.0);
        for k in 0..n - 1 {
            s += pairs[k].1;
            q += pairs[k].1 * pairs[k].1;
            let (nl, nr) = (k + 1, n - k - 1);
            if pairs[k].0 == pairs[k + 1].0 || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let score = (q - s * s / nl as f64) + ((total_sq - q) - (total - s) * (total - s) / nr as f64);
            if best.is_none_or(|b| score < b.score - tol) {
                best = Some(SplitChoice { feature: f, threshold: midpoint(pairs[k].0, pairs[k + 1].0), score });
            }
        }
    }
    best
}

/// CART regression tree grown by variance reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    cols: usize,
    nodes: Vec<Node>,
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    params: TreeParams,
    n_features: usize,
    rng: Option<Rng>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn features(&mut self) -> Vec<usize> {
        let cols = self.x.cols();
        match &mut self.rng {
            Some(rng) if self.n_features < cols => {
                let mut f = sample(rng, cols, self.n_features).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..cols).collect(),
        }
    }

    fn leaf(&mut self, idx: &[usize]) {
        let value = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf { value, n: idx.len() });
    }

    fn grow(&mut self, idx: &[usize], depth: usize) {
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        let deep = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || deep || idx.len() < 2 * self.params.min_leaf {
            return self.leaf(idx);
        }
        let features = self.features();
        let Some(choice) = best_split(self.x, self.y, idx, &features, self.params.min_leaf) else {
            return self.leaf(idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x.get(i, choice.feature) <= choice.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Split { feature: choice.feature, threshold: choice.threshold, right: 0 });
        self.grow(&left, depth + 1);
        let right_at = self.nodes.len();
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(&right, depth + 1);
    }
}

impl TreeModel {
    pub fn fit(x: &FeatureMatrix, y: &[f64], params: &TreeParams) -> Result<Self, RegressError> {
        let idx: Vec<usize> = (0..x.rows()).collect();
        Self::fit_rows(x, y, &idx, params, None)
    }

    /// Grows on the listed rows (repeats allowed). `rng` drives feature
    /// subsampling and is unused when every feature is a candidate.
    fn fit_rows(
        x: &FeatureMatrix,
        y: &[f64],
        idx: &[usize],
        params: &TreeParams,
        rng: Option<Rng>,
    ) -> Result<Self, RegressError> {
        if idx.is_empty() {
            return Err(RegressError::TooFewRows { kind: "dtree", need: 1, got: 0 });
        }
        let n_features = params.max_features.resolve(x.cols());
        let mut b = Builder { x, y, params: *params, n_features, rng, nodes: Vec::new() };
        b.grow(idx, 0);
        Ok(Self { cols: x.cols(), nodes: b.nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// `(feature, threshold)` of the root, or `None` for a single leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((feature, threshold)),
            Node::Leaf { .. } => None,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split { feature, threshold, right } => {
                    at = if row[feature] <= threshold { at + 1 } else { right };
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        check_cols(x, self.cols)?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    pub(super) fn dump(&self, out: &mut String) {
        writeln!(out, "tree {}", self.nodes.len()).unwrap();
        for n in &self.nodes {
            match n {
                Node::Leaf { value, n } => writeln!(out, "leaf {value:.16e} {n}").unwrap(),
                Node::Split { feature, threshold, right } => {
                    writeln!(out, "split {feature} {threshold:.16e} {right}").unwrap()
                }
            }
        }
    }
}

/// Bagged trees; tree `t` draws its bootstrap and feature subsets from
/// seed `seed + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
}

impl ForestModel {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[f64],
        n_trees: usize,
        params: &TreeParams,
        bootstrap: bool,
        seed: u64,
    ) -> Result<Self, RegressError> {
        if x.rows() < 2 {
            return Err(RegressError::TooFewRows { kind: "rforest", need: 2, got: x.rows() });
        }
        let n = x.rows();
        let all: Vec<usize> = (0..n).collect();
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = seed::rng(seed.wrapping_add(t as u64));
                let rows: Vec<usize> = if bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { all.clone() };
                TreeModel::fit_rows(x, y, &rows, params, Some(rng))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { trees })
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressError> {
        let mut acc = vec![0.0; x.rows()];
        for t in &self.trees {
            acc.iter_mut().zip(t.predict(x)?).for_each(|(a, p)| *a += p);
        }
        let n = self.trees.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    pub(super) fn dump(&self, out: &mut String) {
        writeln!(out, "trees {}", self.trees.len()).unwrap();
        self.trees.iter().for_each(|t| t.dump(out));
    }
}
