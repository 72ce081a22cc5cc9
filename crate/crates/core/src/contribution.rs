//! Per-feature contributions from local increments along decision paths.
//!
//! The local increment of a parent→child edge is the change in `y_mean`,
//! credited to the feature the parent splits on. Summing increments along
//! an instance's path telescopes to `leaf.y_mean - root.y_mean`, so the
//! forest-averaged contributions plus the mean root `y_mean` reproduce the
//! forest score.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Value;
use crate::forest::{Forest, ForestError, Result, Tree};

/// Local increment of the edge `parent → child` for `feature`: the change
/// in `y_mean` when the parent splits on `feature`, zero otherwise.
pub fn local_increment(tree: &Tree, parent: usize, child: usize, feature: usize) -> Result<f64> {
    let p = tree.node(parent);
    match p.children {
        Some([l, r]) if l == child || r == child => {}
        _ => return Err(ForestError::NotAChild { parent, child }),
    }
    let splits_on = p.split.as_ref().is_some_and(|s| s.feature() == feature);
    Ok(if splits_on {
        tree.node(child).y_mean - p.y_mean
    } else {
        0.0
    })
}

/// Contribution vector of one tree. The instance must be valid for the
/// forest that owns `tree`.
pub fn tree_contribution(tree: &Tree, instance: &[Value], n_features: usize) -> Vec<f64> {
    let mut contributions = vec![0.0; n_features];
    let path = tree.path(instance);
    for edge in path.windows(2) {
        let parent = tree.node(edge[0]);
        let feature = parent.split.as_ref().expect("path parent is internal").feature();
        contributions[feature] += tree.node(edge[1]).y_mean - parent.y_mean;
    }
    contributions
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionVector {
    pub instance_id: Option<String>,
    pub target_class: u8,
    pub feature_names: Vec<String>,
    /// Signed contributions in target-class probability units, one per feature.
    pub contributions: Vec<f64>,
    pub baseline: f64,
    pub prediction: f64,
}

impl ContributionVector {
    /// Feature indices by descending absolute contribution; ties keep
    /// feature order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.contributions.len()).collect();
        order.sort_by(|&a, &b| self.contributions[b].abs().total_cmp(&self.contributions[a].abs()));
        order
    }

    /// `baseline + Σ contributions - prediction`.
    pub fn residual(&self) -> f64 {
        self.baseline + self.contributions.iter().sum::<f64>() - self.prediction
    }

    pub fn get(&self, feature: &str) -> Option<f64> {
        let i = self.feature_names.iter().position(|n| n == feature)?;
        Some(self.contributions[i])
    }

    pub fn to_doc(&self) -> ContributionDoc {
        ContributionDoc {
            instance_id: self.instance_id.clone(),
            baseline: self.baseline,
            prediction: self.prediction,
            target_class: self.target_class,
            contributions: self
                .feature_names
                .iter()
                .cloned()
                .zip(self.contributions.iter().copied())
                .collect(),
        }
    }
}

/// Wire form: `{baseline, prediction, target_class, contributions: {feature: value}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub baseline: f64,
    pub prediction: f64,
    pub target_class: u8,
    pub contributions: IndexMap<String, f64>,
}

impl ContributionDoc {
    pub fn residual(&self) -> f64 {
        self.baseline + self.contributions.values().sum::<f64>() - self.prediction
    }
}

/// Per-feature mean of [`tree_contribution`] over the forest.
pub fn forest_contribution(forest: &Forest, instance: &[Value]) -> Result<ContributionVector> {
    forest.check_instance(instance)?;
    let n_features = forest.n_features();
    let mut sums = vec![0.0; n_features];
    for tree in &forest.trees {
        for (s, c) in sums.iter_mut().zip(tree_contribution(tree, instance, n_features)) {
            *s += c;
        }
    }
    let n = forest.n_trees() as f64;
    Ok(ContributionVector {
        instance_id: None,
        target_class: forest.target_class,
        feature_names: forest.feature_names(),
        contributions: sums.into_iter().map(|s| s / n).collect(),
        baseline: forest.baseline(),
        prediction: forest.predict_unchecked(instance),
    })
}
