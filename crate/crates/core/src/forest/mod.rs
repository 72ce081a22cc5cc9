//! Random forest classifiers whose nodes keep the target-class fraction
//! (`y_mean`) and training count of every node.
//!
//! Trees are stored as flat node arenas with the root at index 0. A
//! continuous split sends `value < threshold` to the left child, a
//! categorical split sends members of its level subset to the left child,
//! and a missing value follows the child with the larger training count
//! (left on ties).

mod schema;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureMeta, Value};

pub use schema::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data holds a single class")]
    SingleClass,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("instance has {got} values, model expects {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("value {value} is not a level of categorical feature `{feature}`")]
    BadCategoryLevel { feature: String, value: f64 },
    #[error("value {value} of feature `{feature}` is not finite")]
    NonFiniteValue { feature: String, value: f64 },
    #[error("forest carries no bootstrap bookkeeping")]
    NoBootstrapInfo,
    #[error("dataset does not match the forest: {0}")]
    DatasetMismatch(String),
    #[error("node {child} is not a child of node {parent}")]
    NotAChild { parent: usize, child: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("invalid model document: {0}")]
    InvalidModel(String),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ForestError> = std::result::Result<T, E>;

/// Binary split predicate of an internal node.
#[derive(Debug, Clone, PartialEq)]
pub enum Split {
    /// `value < threshold` goes left.
    Below { feature: usize, threshold: f64 },
    /// Level index in `levels` (sorted) goes left.
    InLevels { feature: usize, levels: Vec<u32> },
}

impl Split {
    pub fn feature(&self) -> usize {
        match self {
            Split::Below { feature, .. } | Split::InLevels { feature, .. } => *feature,
        }
    }

    /// Whether a present value goes to the left child.
    pub fn goes_left(&self, value: f64) -> bool {
        match self {
            Split::Below { threshold, .. } => value < *threshold,
            Split::InLevels { levels, .. } => levels.binary_search(&(value as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub split: Option<Split>,
    /// `[left, right]`; present iff `split` is.
    pub children: Option<[usize; 2]>,
    /// Fraction of the node's training rows in the target class.
    pub y_mean: f64,
    pub n_samples: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Gini impurity of the node's training subset.
    pub fn gini(&self) -> f64 {
        2.0 * self.y_mean * (1.0 - self.y_mean)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// Child of `node` taken by `value` for the node's split feature.
    pub fn route(&self, node: &Node, value: Value) -> Option<usize> {
        let (split, [left, right]) = (node.split.as_ref()?, node.children?);
        let go_left = match value {
            Some(v) => split.goes_left(v),
            None => self.nodes[left].n_samples >= self.nodes[right].n_samples,
        };
        Some(if go_left { left } else { right })
    }

    /// Node ids from the root to the leaf reached by `instance`.
    /// The instance must already be validated against the forest.
    pub fn path(&self, instance: &[Value]) -> Vec<usize> {
        let mut path = vec![0];
        let mut node = self.root();
        while let Some(split) = &node.split {
            let next = self
                .route(node, instance[split.feature()])
                .expect("internal node has children");
            path.push(next);
            node = &self.nodes[next];
        }
        path
    }

    pub fn leaf(&self, instance: &[Value]) -> &Node {
        let mut node = self.root();
        while let Some(split) = &node.split {
            node = &self.nodes[self
                .route(node, instance[split.feature()])
                .expect("internal node has children")];
        }
        node
    }

    pub fn depth(&self) -> usize {
        fn go(tree: &Tree, id: usize) -> usize {
            match tree.nodes[id].children {
                Some([l, r]) => 1 + go(tree, l).max(go(tree, r)),
                None => 0,
            }
        }
        go(self, 0)
    }
}

/// Training configuration. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// `None` resolves to the ceiling of the square root of the feature count.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
    /// Class whose fraction `y_mean` measures.
    pub target_class: u8,
}

impl TrainParams {
    /// Validates the parameters for `dataset` and fills in
    /// `features_per_split`.
    pub fn resolve(&self, dataset: &Dataset) -> Result<TrainParams> {
        train::resolve_params(dataset, self)
    }
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            n_trees: 100,
            max_depth: 12,
            min_samples_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 42,
            target_class: 1,
        }
    }
}

/// Out-of-bag bookkeeping recorded when training with bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OobInfo {
    pub error: Option<f64>,
    pub n_rows: usize,
    /// For each tree, the sorted training rows it never drew.
    pub per_tree_oob_rows: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub target_class: u8,
    /// Feature metadata in dataset column order.
    pub features: Vec<FeatureMeta>,
    /// Parameters with `features_per_split` resolved.
    pub params: TrainParams,
    pub oob: Option<OobInfo>,
}

impl Forest {
    pub fn train(dataset: &Dataset, params: &TrainParams) -> Result<Forest> {
        train::train_forest(dataset, params)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| ForestError::UnknownFeature(name.to_string()))
    }

    pub fn oob_error(&self) -> Option<f64> {
        self.oob.as_ref().and_then(|o| o.error)
    }

    /// Checks arity and per-feature validity of an instance.
    pub fn check_instance(&self, instance: &[Value]) -> Result<()> {
        if instance.len() != self.features.len() {
            return Err(ForestError::ArityMismatch {
                expected: self.features.len(),
                got: instance.len(),
            });
        }
        for (meta, value) in self.features.iter().zip(instance) {
            let Some(v) = *value else { continue };
            match meta.levels() {
                Some(levels) => {
                    if !(v.fract() == 0.0 && v >= 0.0 && (v as usize) < levels.len()) {
                        return Err(ForestError::BadCategoryLevel {
                            feature: meta.name.clone(),
                            value: v,
                        });
                    }
                }
                None if !v.is_finite() => {
                    return Err(ForestError::NonFiniteValue {
                        feature: meta.name.clone(),
                        value: v,
                    })
                }
                None => {}
            }
        }
        Ok(())
    }

    /// Target-class score: the mean over trees of the reached leaf's `y_mean`.
    pub fn predict_proba(&self, instance: &[Value]) -> Result<f64> {
        self.check_instance(instance)?;
        Ok(self.predict_unchecked(instance))
    }

    pub(crate) fn predict_unchecked(&self, instance: &[Value]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.leaf(instance).y_mean).sum();
        sum / self.trees.len() as f64
    }

    /// Hard class label: the target class iff the score is at least 0.5.
    pub fn predict_class(&self, instance: &[Value]) -> Result<u8> {
        Ok(self.class_for_score(self.predict_proba(instance)?))
    }

    pub fn class_for_score(&self, score: f64) -> u8 {
        if score >= 0.5 {
            self.target_class
        } else {
            1 - self.target_class
        }
    }

    /// Root-to-leaf node ids of `instance` in tree `tree`.
    pub fn decision_path(&self, tree: usize, instance: &[Value]) -> Result<Vec<usize>> {
        self.check_instance(instance)?;
        Ok(self.trees[tree].path(instance))
    }

    /// Mean of the root `y_mean` over trees.
    pub fn baseline(&self) -> f64 {
        self.trees.iter().map(|t| t.root().y_mean).sum::<f64>() / self.trees.len() as f64
    }

    /// Misclassification rate over rows that were out of bag for at least
    /// one tree, predicting each row from its out-of-bag trees only.
    pub fn oob_error_on(&self, dataset: &Dataset) -> Result<f64> {
        let oob = self.oob.as_ref().ok_or(ForestError::NoBootstrapInfo)?;
        if oob.n_rows != dataset.n_rows() || oob.per_tree_oob_rows.len() != self.trees.len() {
            return Err(ForestError::DatasetMismatch(format!(
                "forest was trained on {} rows, dataset has {}",
                oob.n_rows,
                dataset.n_rows()
            )));
        }
        oob_error_from(self, &oob.per_tree_oob_rows, dataset).ok_or(ForestError::NoBootstrapInfo)
    }

    /// Mean decrease in Gini impurity per feature, weighted by node training
    /// counts, averaged over trees and normalized to sum to one.
    pub fn global_importance_mdi(&self) -> Vec<f64> {
        let mut scores = vec![0.0; self.features.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                let (Some(split), Some([l, r])) = (&node.split, node.children) else {
                    continue;
                };
                let (left, right) = (tree.node(l), tree.node(r));
                let decrease = node.n_samples as f64 * node.gini()
                    - left.n_samples as f64 * left.gini()
                    - right.n_samples as f64 * right.gini();
                scores[split.feature()] += decrease.max(0.0);
            }
        }
        let n = self.trees.len() as f64;
        scores.iter_mut().for_each(|s| *s /= n);
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            scores.iter_mut().for_each(|s| *s /= total);
        }
        scores
    }

    pub fn to_json(&self) -> String {
        schema::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Forest> {
        schema::from_json(text)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Forest> {
        Forest::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn oob_error_from(forest: &Forest, per_tree: &[Vec<u32>], dataset: &Dataset) -> Option<f64> {
    let n = dataset.n_rows();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (tree, rows) in forest.trees.iter().zip(per_tree) {
        for &r in rows {
            let r = r as usize;
            sums[r] += tree.leaf(&dataset.rows[r]).y_mean;
            counts[r] += 1;
        }
    }
    let mut evaluated = 0usize;
    let mut wrong = 0usize;
    for r in 0..n {
        if counts[r] == 0 {
            continue;
        }
        evaluated += 1;
        if forest.class_for_score(sums[r] / counts[r] as f64) != dataset.labels[r] {
            wrong += 1;
        }
    }
    (evaluated > 0).then(|| wrong as f64 / evaluated as f64)
}
