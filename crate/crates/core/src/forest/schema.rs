//! JSON model document (schema v1).
//!
//! ```text
//! {version, params, target_class, feature_list, features,
//!  trees: [{nodes: [{id, split?, left?, right?, y_mean, n}]}],
//!  oob?: {error, n_rows, per_tree_oob_rows}}
//! ```
//!
//! Splits name their feature; categorical splits list level names.

use serde::{Deserialize, Serialize};

use super::{Forest, ForestError, Node, OobInfo, Result, Split, TrainParams, Tree};
use crate::data::FeatureMeta;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    version: u64,
    params: TrainParams,
    target_class: u8,
    feature_list: Vec<String>,
    features: Vec<FeatureMeta>,
    trees: Vec<TreeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oob: Option<OobInfo>,
}

#[derive(Serialize, Deserialize)]
struct TreeDoc {
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    right: Option<usize>,
    y_mean: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SplitDoc {
    Threshold { feature: String, threshold: f64 },
    Levels { feature: String, levels: Vec<String> },
}

pub(super) fn to_json(forest: &Forest) -> String {
    let names = forest.feature_names();
    let trees = forest
        .trees
        .iter()
        .map(|tree| TreeDoc {
            nodes: tree
                .nodes
                .iter()
                .map(|node| NodeDoc {
                    id: node.id,
                    split: node.split.as_ref().map(|split| match split {
                        Split::Below { feature, threshold } => SplitDoc::Threshold {
                            feature: names[*feature].clone(),
                            threshold: *threshold,
                        },
                        Split::InLevels { feature, levels } => {
                            let all = forest.features[*feature].levels().unwrap_or_default();
                            SplitDoc::Levels {
                                feature: names[*feature].clone(),
                                levels: levels.iter().map(|&l| all[l as usize].clone()).collect(),
                            }
                        }
                    }),
                    left: node.children.map(|c| c[0]),
                    right: node.children.map(|c| c[1]),
                    y_mean: node.y_mean,
                    n: node.n_samples,
                })
                .collect(),
        })
        .collect();
    let doc = ForestDoc {
        version: SCHEMA_VERSION,
        params: forest.params.clone(),
        target_class: forest.target_class,
        feature_list: names,
        features: forest.features.clone(),
        trees,
        oob: forest.oob.clone(),
    };
    serde_json::to_string(&doc).expect("forest serialization cannot fail")
}

pub(super) fn from_json(text: &str) -> Result<Forest> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0);
    if version != SCHEMA_VERSION {
        return Err(ForestError::SchemaVersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let doc: ForestDoc = serde_json::from_value(value)?;
    let invalid = |msg: String| ForestError::InvalidModel(msg);

    if doc.feature_list.len() != doc.features.len()
        || doc.feature_list.iter().zip(&doc.features).any(|(n, f)| *n != f.name)
    {
        return Err(invalid("feature_list does not match features".into()));
    }
    if doc.target_class > 1 {
        return Err(invalid(format!(
            "target_class {} is not a class index",
            doc.target_class
        )));
    }
    if doc.trees.is_empty() {
        return Err(invalid("forest has no trees".into()));
    }
    let feature_of = |name: &str| {
        doc.feature_list
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| invalid(format!("split on unknown feature `{name}`")))
    };

    let mut trees = Vec::with_capacity(doc.trees.len());
    for (t, tree) in doc.trees.iter().enumerate() {
        let mut nodes = Vec::with_capacity(tree.nodes.len());
        for (i, node) in tree.nodes.iter().enumerate() {
            if node.id != i {
                return Err(invalid(format!("tree {t}: node {i} has id {}", node.id)));
            }
            let split = match &node.split {
                None => None,
                Some(SplitDoc::Threshold { feature, threshold }) => {
                    let feature = feature_of(feature)?;
                    if doc.features[feature].is_categorical() || !threshold.is_finite() {
                        return Err(invalid(format!("tree {t}: bad threshold split at node {i}")));
                    }
                    Some(Split::Below {
                        feature,
                        threshold: *threshold,
                    })
                }
                Some(SplitDoc::Levels { feature, levels }) => {
                    let feature = feature_of(feature)?;
                    let all = doc.features[feature]
                        .levels()
                        .ok_or_else(|| invalid(format!("tree {t}: level split on continuous feature")))?;
                    let mut idx = levels
                        .iter()
                        .map(|l| all.iter().position(|a| a == l).map(|p| p as u32))
                        .collect::<Option<Vec<u32>>>()
                        .ok_or_else(|| invalid(format!("tree {t}: unknown level in split at node {i}")))?;
                    idx.sort_unstable();
                    idx.dedup();
                    if idx.is_empty() {
                        return Err(invalid(format!("tree {t}: empty level subset at node {i}")));
                    }
                    Some(Split::InLevels { feature, levels: idx })
                }
            };
            let children = match (node.left, node.right) {
                (Some(l), Some(r)) => Some([l, r]),
                (None, None) => None,
                _ => return Err(invalid(format!("tree {t}: node {i} has a single child"))),
            };
            if split.is_some() != children.is_some() {
                return Err(invalid(format!("tree {t}: node {i} mixes leaf and split fields")));
            }
            if !(0.0..=1.0).contains(&node.y_mean) || node.n == 0 {
                return Err(invalid(format!("tree {t}: node {i} has invalid statistics")));
            }
            nodes.push(Node {
                id: i,
                split,
                children,
                y_mean: node.y_mean,
                n_samples: node.n,
            });
        }
        let mut reached = vec![false; nodes.len()];
        if !nodes.is_empty() {
            reached[0] = true;
        }
        for node in &nodes {
            if let Some([l, r]) = node.children {
                if l <= node.id || r <= node.id || l >= nodes.len() || r >= nodes.len() || l == r {
                    return Err(invalid(format!("tree {t}: node {} has bad child ids", node.id)));
                }
                if reached[l] || reached[r] {
                    return Err(invalid(format!("tree {t}: node {} shares a child", node.id)));
                }
                reached[l] = true;
                reached[r] = true;
                if nodes[l].n_samples + nodes[r].n_samples != node.n_samples {
                    return Err(invalid(format!(
                        "tree {t}: node {} child counts do not add up",
                        node.id
                    )));
                }
            }
        }
        if nodes.is_empty() || reached.iter().any(|r| !r) {
            return Err(invalid(format!("tree {t}: unreachable or missing nodes")));
        }
        trees.push(Tree { nodes });
    }
    if let Some(oob) = &doc.oob {
        if oob.per_tree_oob_rows.len() != trees.len()
            || oob
                .per_tree_oob_rows
                .iter()
                .flatten()
                .any(|&r| r as usize >= oob.n_rows)
        {
            return Err(invalid("oob bookkeeping does not match the trees".into()));
        }
    }

    Ok(Forest {
        trees,
        target_class: doc.target_class,
        features: doc.features,
        params: doc.params,
        oob: doc.oob,
    })
}
