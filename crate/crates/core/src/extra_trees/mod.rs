//! Extremely Randomized Trees classifier.
//!
//! Every tree is grown on the full training set (no bootstrap). At each node
//! K features are drawn at random, each receives a single uniform random
//! cut-point, and the best of those K candidates is kept. K = 1 gives totally
//! randomized trees whose shape does not depend on the labels.

mod cv;
mod persist;
mod split;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::decompose::OfflineAccount;
use crate::exec::Execution;
use crate::rng;

pub use cv::{cross_validate, stratified_folds, CvReport, FoldResult};
pub use persist::{load_model, read_model, save_model, write_model, MODEL_FORMAT, MODEL_VERSION};
pub use split::{pick_split, Split, SplitRule, SplitScore};

/// Feature columns taken from an offline account row. The account key is
/// deliberately absent.
pub const OFFLINE_FEATURES: [&str; 8] = [
    "balance_limit", "sex", "education", "marriage", "age", "total_bill", "total_payment", "repayment",
];

pub fn offline_features(a: &OfflineAccount) -> [f64; 8] {
    [
        a.balance_limit as f64,
        a.sex as f64,
        a.education as f64,
        a.marriage as f64,
        a.age as f64,
        a.total_bill as f64,
        a.total_payment as f64,
        a.repayment as f64,
    ]
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("training data is empty")]
    Empty,
    #[error("training data has a single class ({0}); the model would be constant")]
    SingleClass(u8),
    #[error("data error: {0}")]
    Data(String),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file error: {0}")]
    Format(String),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

/// Feature-major training table with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, labels: Vec<u8>, names: Option<Vec<String>>) -> Result<Self, TreeError> {
        if columns.is_empty() {
            return Err(TreeError::Data("no feature columns".into()));
        }
        if columns.iter().any(|c| c.len() != labels.len()) {
            return Err(TreeError::Data("column lengths differ from label count".into()));
        }
        if columns.iter().flatten().any(|v| v.is_nan()) {
            return Err(TreeError::Data("NaN feature value".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(TreeError::Data("labels must be 0 or 1".into()));
        }
        let feature_names = match names {
            Some(n) if n.len() == columns.len() => n,
            Some(_) => return Err(TreeError::Data("feature name count mismatch".into())),
            None => (0..columns.len()).map(|i| format!("f{i}")).collect(),
        };
        Ok(Dataset { columns, labels, feature_names })
    }

    /// Builds a table from row-major feature vectors.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<u8>) -> Result<Self, TreeError> {
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(TreeError::Data("ragged rows".into()));
        }
        let columns = (0..d).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        Dataset::new(columns, labels, None)
    }

    pub fn from_offline(rows: &[OfflineAccount]) -> Self {
        let mut columns = vec![Vec::with_capacity(rows.len()); OFFLINE_FEATURES.len()];
        for r in rows {
            for (col, v) in columns.iter_mut().zip(offline_features(r)) {
                col.push(v);
            }
        }
        Dataset {
            columns,
            labels: rows.iter().map(|r| r.default).collect(),
            feature_names: OFFLINE_FEATURES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same features, labels replaced.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Dataset, TreeError> {
        Dataset::new(self.columns.clone(), labels, Some(self.feature_names.clone()))
    }
}

/// Candidate features per node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KFeatures {
    /// `ceil(sqrt(d))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl KFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            KFeatures::Auto => ((d as f64).sqrt().ceil() as usize).max(1),
            KFeatures::Fixed(k) => k,
        }
    }
}

impl fmt::Display for KFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KFeatures::Auto => f.write_str("auto"),
            KFeatures::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for KFeatures {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KFeatures::Auto => s.serialize_str("auto"),
            KFeatures::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KFeatures {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(KFeatures::Fixed(k as usize)),
            Raw::Text(s) if s == "auto" => Ok(KFeatures::Auto),
            Raw::Text(s) => s
                .parse()
                .map(KFeatures::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("k_features must be \"auto\" or an integer, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtraTreesParams {
    pub n_trees: usize,
    pub k_features: KFeatures,
    /// Nodes with fewer samples become leaves.
    pub n_min: usize,
    pub seed: u64,
    pub score: SplitScore,
}

impl Default for ExtraTreesParams {
    fn default() -> Self {
        ExtraTreesParams { n_trees: 100, k_features: KFeatures::Auto, n_min: 2, seed: 0, score: SplitScore::default() }
    }
}

impl ExtraTreesParams {
    pub fn validate(&self, d: usize) -> Result<(), TreeError> {
        if self.n_trees == 0 {
            return Err(TreeError::Params("n_trees must be at least 1".into()));
        }
        if self.n_min < 2 {
            return Err(TreeError::Params(format!("n_min must be at least 2, got {}", self.n_min)));
        }
        let k = self.k_features.resolve(d);
        if k == 0 || k > d {
            return Err(TreeError::Params(format!("k_features must be in 1..={d}, got {k}")));
        }
        Ok(())
    }

    fn rule(&self, d: usize) -> SplitRule {
        SplitRule { k_features: self.k_features.resolve(d), n_min: self.n_min, score: self.score }
    }
}

pub const LEAF: i32 = -1;

/// A binary tree stored as parallel node arrays; node 0 is the root.
///
/// Internal nodes hold a feature index and cut-point (`x[feature] < cut` goes
/// left). Leaves have `feature == LEAF`. Every node keeps its training sample
/// count and how many of those were positive.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub cut: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub samples: Vec<u32>,
    pub positives: Vec<u32>,
}

/// Label-free shape of a tree: split features, cut-points, links and counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub feature: Vec<i32>,
    pub cut: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub samples: Vec<u32>,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] == LEAF
    }

    /// Class frequencies `[p(0), p(1)]` at a node.
    pub fn distribution(&self, node: usize) -> [f64; 2] {
        let n = self.samples[node] as f64;
        let pos = self.positives[node] as f64;
        [(n - pos) / n, pos / n]
    }

    fn push(&mut self, samples: u32, positives: u32) -> usize {
        self.feature.push(LEAF);
        self.cut.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.samples.push(samples);
        self.positives.push(positives);
        self.feature.len() - 1
    }

    /// Leaf reached by `x`.
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut node = 0;
        while self.feature[node] != LEAF {
            node = if x[self.feature[node] as usize] < self.cut[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.distribution(self.leaf_of(x))[1]
    }

    pub fn skeleton(&self) -> Skeleton {
        Skeleton {
            feature: self.feature.clone(),
            cut: self.cut.clone(),
            left: self.left.clone(),
            right: self.right.clone(),
            samples: self.samples.clone(),
        }
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 1usize)];
        while let Some((node, d)) = stack.pop() {
            best = best.max(d);
            if !self.is_leaf(node) {
                stack.push((self.left[node] as usize, d + 1));
                stack.push((self.right[node] as usize, d + 1));
            }
        }
        best
    }
}

/// Grows one tree over every row of `data`. Returns the tree and its
/// per-feature impurity decrease totals.
fn grow_tree(data: &Dataset, rule: &SplitRule, rng: &mut rng::StreamRng) -> (Tree, Vec<f64>) {
    let n = data.n_rows();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut tree = Tree::default();
    let mut decrease = vec![0.0; data.n_features()];

    let positives = |rows: &[u32]| rows.iter().filter(|&&i| data.labels[i as usize] == 1).count() as u32;
    let root = tree.push(n as u32, positives(&idx));
    // (node, start, end) ranges into `idx`, processed depth-first, left first.
    let mut stack = vec![(root, 0usize, n)];
    while let Some((node, start, end)) = stack.pop() {
        let rows = &mut idx[start..end];
        let Some(split) = pick_split(data, rows, rule, rng) else {
            continue;
        };
        let column = &data.columns[split.feature];
        let mut mid = 0;
        for j in 0..rows.len() {
            if column[rows[j] as usize] < split.cut {
                rows.swap(j, mid);
                mid += 1;
            }
        }
        let (l_rows, r_rows) = rows.split_at(mid);
        let left = tree.push(l_rows.len() as u32, positives(l_rows));
        let right = tree.push(r_rows.len() as u32, positives(r_rows));
        tree.feature[node] = split.feature as i32;
        tree.cut[node] = split.cut;
        tree.left[node] = left as u32;
        tree.right[node] = right as u32;
        decrease[split.feature] += split.impurity_decrease;

        stack.push((right, start + mid, end));
        stack.push((left, start, start + mid));
    }
    (tree, decrease)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtraTreesModel {
    pub params: ExtraTreesParams,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
    /// Impurity-decrease importances, non-negative and summing to 1.
    pub feature_importance: Vec<f64>,
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = v.iter().sum();
    (total > 0.0).then(|| v.iter().map(|x| x / total).collect())
}

pub fn train(data: &Dataset, params: &ExtraTreesParams, exec: Execution) -> Result<ExtraTreesModel, TreeError> {
    let d = data.n_features();
    params.validate(d)?;
    if data.n_rows() == 0 {
        return Err(TreeError::Empty);
    }
    let positives = data.labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == data.n_rows() {
        return Err(TreeError::SingleClass(data.labels[0]));
    }

    let rule = params.rule(d);
    let grown = exec.map_range(params.n_trees, |t| {
        let mut rng = rng::stream(params.seed, &[t as u64]);
        grow_tree(data, &rule, &mut rng)
    });

    // Each tree's decreases are normalized before averaging, then the
    // average is normalized again; a model of bare leaves falls back to
    // uniform importances.
    let mut importance = vec![0.0; d];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, dec) in grown {
        if let Some(norm) = normalized(&dec) {
            for (acc, v) in importance.iter_mut().zip(norm) {
                *acc += v;
            }
        }
        trees.push(tree);
    }
    let feature_importance = normalized(&importance).unwrap_or_else(|| vec![1.0 / d as f64; d]);

    Ok(ExtraTreesModel { params: params.clone(), feature_names: data.feature_names.clone(), trees, feature_importance })
}

impl ExtraTreesModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean class-1 leaf frequency over all trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, TreeError> {
        if x.len() != self.n_features() {
            return Err(TreeError::Dimension { expected: self.n_features(), got: x.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((sum / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    pub fn predict_offline(&self, row: &OfflineAccount) -> Result<f64, TreeError> {
        self.predict_proba(&offline_features(row))
    }

    pub fn predict_dataset(&self, data: &Dataset, exec: Execution) -> Result<Vec<f64>, TreeError> {
        if data.n_features() != self.n_features() {
            return Err(TreeError::Dimension { expected: self.n_features(), got: data.n_features() });
        }
        let out = exec.map_range(data.n_rows(), |i| self.predict_proba(&data.row(i)));
        out.into_iter().collect()
    }

    /// Importance by feature name.
    pub fn importance_of(&self, name: &str) -> Option<f64> {
        self.feature_names.iter().position(|n| n == name).map(|i| self.feature_importance[i])
    }
}
