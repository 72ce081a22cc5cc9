//! Local rule extraction.
//!
//! The pipeline for one instance:
//!
//! 1. sample a synthetic neighbourhood from an n-ball around the instance
//!    and label it with the forest ([`sampling`]);
//! 2. turn the instance's root-to-leaf path in every tree into a rule;
//! 3. greedily drop constraints whose removal costs at most `epsilon`
//!    accuracy on the neighbourhood;
//! 4. collapse duplicate rules;
//! 5. score rules with a secondary forest trained on the binary
//!    row × rule coverage matrix, penalizing long rules by
//!    `gamma^(len - 1)`; rules that disagree with most of the rows they
//!    cover score zero;
//! 6. keep rules scoring at least `tau` and measure how often their
//!    importance-weighted vote agrees with the forest on the neighbourhood.

pub mod sampling;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contribution::{forest_contribution, ContributionVector};
use crate::data::{Dataset, FeatureMeta, Value};
use crate::forest::{Forest, ForestError, Split, TrainParams};

pub use sampling::{label_synthetic, normalized_distance, sample_nball, SyntheticSet};

/// Secondary forest used for rule importance.
pub const SECONDARY_TREES: usize = 50;
pub const SECONDARY_MAX_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("invalid rule configuration: {0}")]
    InvalidConfig(String),
    #[error("synthetic set is empty")]
    EmptySet,
    #[error("synthetic set has no labels")]
    Unlabeled,
    #[error("no rules to score")]
    NoRules,
    #[error("constraint refers to feature {0}, which the contribution vector lacks")]
    UnknownFeature(usize),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

pub type Result<T, E = RuleError> = std::result::Result<T, E>;

/// Predicate on one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Below(f64),
    AtLeast(f64),
    /// Sorted level indices.
    InLevels(Vec<u32>),
    /// Value is missing; emitted when the instance itself lacks the feature.
    Missing,
}

impl Condition {
    fn rank(&self) -> u8 {
        match self {
            Condition::AtLeast(_) => 0,
            Condition::Below(_) => 1,
            Condition::InLevels(_) => 2,
            Condition::Missing => 3,
        }
    }

    fn holds(&self, value: Value) -> bool {
        match (self, value) {
            (Condition::Missing, v) => v.is_none(),
            (_, None) => false,
            (Condition::Below(t), Some(v)) => v < *t,
            (Condition::AtLeast(t), Some(v)) => v >= *t,
            (Condition::InLevels(levels), Some(v)) => levels.binary_search(&(v as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub feature: usize,
    pub condition: Condition,
    /// Edge width for display: the magnitude of the feature's contribution.
    pub width: f64,
}

impl Constraint {
    pub fn holds(&self, row: &[Value]) -> bool {
        self.condition.holds(row[self.feature])
    }
}

/// Constraints as `(feature, kind, payload bits)` plus the class.
type RuleKey = (Vec<(usize, u8, Vec<u64>)>, u8);

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    /// Canonical order: by feature, lower bound before upper bound.
    pub constraints: Vec<Constraint>,
    pub predicted_class: u8,
    pub source_trees: Vec<usize>,
    pub importance: f64,
}

impl Rule {
    pub fn covers(&self, row: &[Value]) -> bool {
        self.constraints.iter().all(|c| c.holds(row))
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    fn canonicalize(&mut self) {
        self.constraints.sort_by_key(|c| (c.feature, c.condition.rank()));
    }

    /// Identity used for de-duplication.
    fn key(&self) -> RuleKey {
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                let payload = match &c.condition {
                    Condition::Below(t) | Condition::AtLeast(t) => vec![t.to_bits()],
                    Condition::InLevels(levels) => levels.iter().map(|&l| u64::from(l)).collect(),
                    Condition::Missing => Vec::new(),
                };
                (c.feature, c.condition.rank(), payload)
            })
            .collect();
        (constraints, self.predicted_class)
    }
}

/// Builds a rule from per-feature conditions, merging repeated bounds.
fn merge_conditions(conditions: Vec<(usize, Condition)>) -> Vec<Constraint> {
    let mut merged: Vec<Constraint> = Vec::new();
    for (feature, condition) in conditions {
        let existing = merged
            .iter_mut()
            .find(|c| c.feature == feature && c.condition.rank() == condition.rank());
        match (existing, condition) {
            (None, condition) => merged.push(Constraint {
                feature,
                condition,
                width: 0.0,
            }),
            (Some(c), Condition::Below(t)) => {
                if let Condition::Below(old) = &mut c.condition {
                    *old = old.min(t);
                }
            }
            (Some(c), Condition::AtLeast(t)) => {
                if let Condition::AtLeast(old) = &mut c.condition {
                    *old = old.max(t);
                }
            }
            (Some(c), Condition::InLevels(levels)) => {
                if let Condition::InLevels(old) = &mut c.condition {
                    old.retain(|l| levels.binary_search(l).is_ok());
                }
            }
            (Some(_), Condition::Missing) => {}
        }
    }
    merged
}

/// One rule per tree: the instance's root-to-leaf predicates, merged to at
/// most one lower and one upper bound per feature.
pub fn extract_rules(forest: &Forest, instance: &[Value]) -> Result<Vec<Rule>> {
    forest.check_instance(instance)?;
    Ok(forest
        .trees
        .iter()
        .enumerate()
        .map(|(t, tree)| {
            let path = tree.path(instance);
            let conditions = path
                .windows(2)
                .map(|edge| {
                    let node = tree.node(edge[0]);
                    let split = node.split.as_ref().expect("path parent is internal");
                    let went_left = node.children.is_some_and(|c| c[0] == edge[1]);
                    let feature = split.feature();
                    let condition = match (instance[feature], split) {
                        (None, _) => Condition::Missing,
                        (Some(_), Split::Below { threshold, .. }) => {
                            if went_left {
                                Condition::Below(*threshold)
                            } else {
                                Condition::AtLeast(*threshold)
                            }
                        }
                        (Some(_), Split::InLevels { levels, .. }) => {
                            if went_left {
                                Condition::InLevels(levels.clone())
                            } else {
                                let n = forest.features[feature].levels().map_or(0, <[String]>::len) as u32;
                                Condition::InLevels((0..n).filter(|l| levels.binary_search(l).is_err()).collect())
                            }
                        }
                    };
                    (feature, condition)
                })
                .collect();
            let mut rule = Rule {
                constraints: merge_conditions(conditions),
                predicted_class: forest.class_for_score(tree.leaf(instance).y_mean),
                source_trees: vec![t],
                importance: 0.0,
            };
            rule.canonicalize();
            rule
        })
        .collect())
}

/// Rows where the rule, read as covered → its class and uncovered → the
/// other class, agrees with the set's labels.
fn correct_count(covered: impl Iterator<Item = bool>, labels: &[u8], class: u8) -> usize {
    covered
        .zip(labels)
        .filter(|(cov, &label)| (if *cov { class } else { 1 - class }) == label)
        .count()
}

/// Greedy constraint removal. Each round evaluates every single removal
/// and commits the least damaging one (ties: earliest constraint) if the
/// accuracy drop on the set is at most `epsilon`.
pub fn prune_rule(rule: &Rule, set: &SyntheticSet, epsilon: f64) -> Result<Rule> {
    let labels = set.labels()?;
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(RuleError::InvalidConfig(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    let allowed = (epsilon * labels.len() as f64 + 1e-9).floor() as usize;
    let mut kept: Vec<Constraint> = rule.constraints.clone();
    let mut holds: Vec<Vec<bool>> = kept
        .iter()
        .map(|c| set.rows.iter().map(|r| c.holds(r)).collect())
        .collect();
    let class = rule.predicted_class;
    let covered_without = |holds: &[Vec<bool>], skip: Option<usize>, r: usize| {
        holds.iter().enumerate().all(|(i, h)| Some(i) == skip || h[r])
    };
    let mut current = correct_count(
        (0..labels.len()).map(|r| covered_without(&holds, None, r)),
        labels,
        class,
    );

    while !kept.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..kept.len() {
            let score = correct_count(
                (0..labels.len()).map(|r| covered_without(&holds, Some(i), r)),
                labels,
                class,
            );
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        let (i, score) = best.expect("at least one constraint");
        if current.saturating_sub(score) > allowed {
            break;
        }
        kept.remove(i);
        holds.remove(i);
        current = score;
    }
    Ok(Rule {
        constraints: kept,
        ..rule.clone()
    })
}

/// Collapses rules with identical constraints and class, keeping the first
/// occurrence and merging source trees.
pub fn dedupe_rules(rules: Vec<Rule>) -> Vec<Rule> {
    let mut out: Vec<Rule> = Vec::new();
    let mut seen: HashMap<RuleKey, usize> = HashMap::new();
    for mut rule in rules {
        rule.canonicalize();
        match seen.get(&rule.key()) {
            Some(&i) => {
                let trees = &mut out[i].source_trees;
                trees.extend(rule.source_trees);
                trees.sort_unstable();
                trees.dedup();
            }
            None => {
                seen.insert(rule.key(), out.len());
                out.push(rule);
            }
        }
    }
    out
}

/// Rule scores from a secondary forest trained on the binary coverage
/// matrix (rows = synthetic samples, columns = rules). Each rule's MDI
/// importance is multiplied by `gamma^(len - 1)` and the scores are
/// renormalized to sum to one when any is positive.
///
/// Only rules that agree with the majority of the rows they cover enter
/// the matrix; the rest score zero. When the secondary forest finds no
/// impurity to reduce, every admitted rule gets the same unpenalized score.
pub fn rule_importance(rules: &[Rule], set: &SyntheticSet, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    if rules.is_empty() {
        return Err(RuleError::NoRules);
    }
    let labels = set.labels()?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(RuleError::InvalidConfig(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let admitted = agreeing_rules(rules, set)?;
    let columns: Vec<Rule> = admitted.iter().map(|&i| rules[i].clone()).collect();
    let mut mdi = vec![0.0; rules.len()];
    if !columns.is_empty() {
        let column_mdi = coverage_mdi(&columns, set, labels, seed)?;
        let uniform = column_mdi.iter().all(|&m| m == 0.0);
        for (&i, m) in admitted.iter().zip(column_mdi) {
            mdi[i] = if uniform { 1.0 / columns.len() as f64 } else { m };
        }
    }
    let mut scores: Vec<f64> = rules
        .iter()
        .zip(mdi)
        .map(|(rule, m)| m * gamma.powi(rule.len().saturating_sub(1) as i32))
        .collect();
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter_mut().for_each(|s| *s /= total);
    }
    Ok(scores)
}

/// One-vs-rest accuracy of a rule on a labelled set: covered rows are
/// predicted as the rule's class, uncovered rows as the other class.
pub fn rule_accuracy(rule: &Rule, set: &SyntheticSet) -> Result<f64> {
    let labels = set.labels()?;
    let correct = correct_count(set.rows.iter().map(|r| rule.covers(r)), labels, rule.predicted_class);
    Ok(correct as f64 / labels.len() as f64)
}

/// Indices of rules for which more than half of the covered rows carry the
/// rule's predicted class.
pub fn agreeing_rules(rules: &[Rule], set: &SyntheticSet) -> Result<Vec<usize>> {
    let labels = set.labels()?;
    Ok(rules
        .iter()
        .enumerate()
        .filter(|(_, rule)| {
            let (covered, agree) = set
                .rows
                .iter()
                .zip(labels)
                .filter(|(row, _)| rule.covers(row))
                .fold((0usize, 0usize), |(c, a), (_, &l)| {
                    (c + 1, a + usize::from(l == rule.predicted_class))
                });
            2 * agree > covered
        })
        .map(|(i, _)| i)
        .collect())
}

/// Unpenalized MDI importance of each rule's coverage column.
pub fn coverage_mdi(rules: &[Rule], set: &SyntheticSet, labels: &[u8], seed: u64) -> Result<Vec<f64>> {
    if labels.iter().all(|&l| l == labels[0]) {
        return Ok(vec![0.0; rules.len()]);
    }
    let rows: Vec<Vec<Value>> = set
        .rows
        .iter()
        .map(|row| {
            rules
                .iter()
                .map(|rule| Some(f64::from(u8::from(rule.covers(row)))))
                .collect()
        })
        .collect();
    let features = (0..rules.len())
        .map(|j| {
            let column = rows.iter().map(|r| r[j].unwrap_or(0.0));
            let (lo, hi) = crate::data::min_max(column).unwrap_or((0.0, 0.0));
            FeatureMeta::continuous(format!("rule_{j}"), lo, hi)
        })
        .collect();
    let matrix = Dataset::new(features, rows, labels.to_vec(), ["0".into(), "1".into()])
        .map_err(|e| RuleError::InvalidConfig(e.to_string()))?;
    let params = TrainParams {
        n_trees: SECONDARY_TREES,
        max_depth: SECONDARY_MAX_DEPTH,
        min_samples_leaf: 1,
        features_per_split: None,
        bootstrap: true,
        seed,
        target_class: 1,
    };
    Ok(Forest::train(&matrix, &params)?.global_importance_mdi())
}

/// Display width of each constraint: the absolute contribution of its feature.
pub fn constraint_widths(rule: &Rule, contribution: &ContributionVector) -> Result<Vec<f64>> {
    rule.constraints
        .iter()
        .map(|c| {
            contribution
                .contributions
                .get(c.feature)
                .map(|v| v.abs())
                .ok_or(RuleError::UnknownFeature(c.feature))
        })
        .collect()
}

/// Share of synthetic rows where the rule set's importance-weighted vote
/// agrees with the forest label. Rows with no covering rule, or a tied
/// vote, are predicted as `fallback`.
pub fn fidelity(rules: &[Rule], set: &SyntheticSet, fallback: u8) -> Result<f64> {
    let labels = set.labels()?;
    let agree = set
        .rows
        .iter()
        .zip(labels)
        .filter(|(row, &label)| {
            let mut votes = [0.0f64; 2];
            for rule in rules.iter().filter(|r| r.covers(row)) {
                votes[rule.predicted_class as usize] += rule.importance;
            }
            let predicted = if votes[1] > votes[0] {
                1
            } else if votes[0] > votes[1] {
                0
            } else {
                fallback
            };
            predicted == label
        })
        .count();
    Ok(agree as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSeeds {
    pub sampling: u64,
    pub importance: u64,
}

impl Default for RuleSeeds {
    fn default() -> Self {
        RuleSeeds {
            sampling: 42,
            importance: 43,
        }
    }
}

/// Rule pipeline settings. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    /// Ball radius in range-normalized units.
    pub delta: f64,
    /// Synthetic sample count.
    pub m: usize,
    /// Largest tolerated accuracy drop per pruning step.
    pub epsilon: f64,
    /// Length penalty base.
    pub gamma: f64,
    /// Minimum normalized importance of a reported rule.
    pub tau: f64,
    pub flip_probability: f64,
    pub seeds: RuleSeeds,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            delta: 0.15,
            m: 2000,
            epsilon: 0.02,
            gamma: 0.9,
            tau: 0.02,
            flip_probability: 0.1,
            seeds: RuleSeeds::default(),
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RuleError::InvalidConfig(msg));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return bad(format!(
                "flip_probability must lie in [0, 1], got {}",
                self.flip_probability
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleExplanation {
    pub instance_id: Option<String>,
    /// Forest score of the instance.
    pub posterior: f64,
    /// Surviving rules by descending importance.
    pub rules: Vec<Rule>,
    pub fidelity: f64,
    /// Set when every rule fell below `tau`; `fidelity` is then that of the
    /// majority-label predictor.
    pub all_rules_filtered: bool,
    pub config: RuleConfig,
}

/// Every intermediate stage of one pipeline run.
#[derive(Debug, Clone)]
pub struct RuleTrace {
    pub set: SyntheticSet,
    pub extracted: Vec<Rule>,
    pub pruned: Vec<Rule>,
    pub deduped: Vec<Rule>,
    pub explanation: RuleExplanation,
}

pub fn explain_rules(forest: &Forest, instance: &[Value], config: &RuleConfig) -> Result<RuleExplanation> {
    Ok(explain_rules_traced(forest, instance, config)?.explanation)
}

pub fn explain_rules_traced(forest: &Forest, instance: &[Value], config: &RuleConfig) -> Result<RuleTrace> {
    config.validate()?;
    let contribution = forest_contribution(forest, instance)?;
    let posterior = contribution.prediction;

    let set = sample_nball(
        instance,
        config.delta,
        config.m,
        &forest.features,
        config.flip_probability,
        config.seeds.sampling,
    )?;
    let set = label_synthetic(forest, set)?;

    let extracted = extract_rules(forest, instance)?;
    let pruned = extracted
        .par_iter()
        .map(|rule| prune_rule(rule, &set, config.epsilon))
        .collect::<Result<Vec<_>>>()?;
    let deduped = dedupe_rules(pruned.clone());

    let scores = rule_importance(&deduped, &set, config.gamma, config.seeds.importance)?;
    let mut rules: Vec<Rule> = deduped
        .iter()
        .cloned()
        .zip(scores)
        .filter(|(_, score)| *score >= config.tau)
        .map(|(mut rule, score)| {
            rule.importance = score;
            rule
        })
        .collect();
    rules.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    for rule in &mut rules {
        let widths = constraint_widths(rule, &contribution)?;
        for (c, w) in rule.constraints.iter_mut().zip(widths) {
            c.width = w;
        }
    }

    let majority = set.majority_label(forest.target_class)?;
    let fidelity = fidelity(&rules, &set, majority)?;
    let explanation = RuleExplanation {
        instance_id: None,
        posterior,
        all_rules_filtered: rules.is_empty(),
        rules,
        fidelity,
        config: config.clone(),
    };
    Ok(RuleTrace {
        set,
        extracted,
        pruned,
        deduped,
        explanation,
    })
}

/// Wire form of one constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDoc {
    pub feature: String,
    /// One of `<`, `>=`, `in`, `missing`.
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleDoc {
    pub constraints: Vec<ConstraintDoc>,
    pub class: u8,
    pub importance: f64,
    pub source_trees: Vec<usize>,
}

/// Wire form of a [`RuleExplanation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleExplanationDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub posterior: f64,
    pub fidelity: f64,
    #[serde(default)]
    pub all_rules_filtered: bool,
    pub config: RuleConfig,
    pub rules: Vec<RuleDoc>,
}

impl Constraint {
    pub fn to_doc(&self, features: &[FeatureMeta]) -> ConstraintDoc {
        let meta = &features[self.feature];
        let (op, value, levels) = match &self.condition {
            Condition::Below(t) => ("<", Some(*t), None),
            Condition::AtLeast(t) => (">=", Some(*t), None),
            Condition::InLevels(ls) => {
                let names = meta.levels().unwrap_or_default();
                (
                    "in",
                    None,
                    Some(ls.iter().map(|&l| names[l as usize].clone()).collect()),
                )
            }
            Condition::Missing => ("missing", None, None),
        };
        ConstraintDoc {
            feature: meta.name.clone(),
            op: op.to_string(),
            value,
            levels,
            width: self.width,
        }
    }
}

impl Rule {
    pub fn to_doc(&self, features: &[FeatureMeta]) -> RuleDoc {
        RuleDoc {
            constraints: self.constraints.iter().map(|c| c.to_doc(features)).collect(),
            class: self.predicted_class,
            importance: self.importance,
            source_trees: self.source_trees.clone(),
        }
    }
}

impl RuleExplanation {
    pub fn to_doc(&self, features: &[FeatureMeta]) -> RuleExplanationDoc {
        RuleExplanationDoc {
            instance_id: self.instance_id.clone(),
            posterior: self.posterior,
            fidelity: self.fidelity,
            all_rules_filtered: self.all_rules_filtered,
            config: self.config.clone(),
            rules: self.rules.iter().map(|r| r.to_doc(features)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::test_util::*;
    use crate::forest::{Node, Tree};

    fn c(feature: usize, condition: Condition) -> Constraint {
        Constraint {
            feature,
            condition,
            width: 0.0,
        }
    }

    fn rule(constraints: Vec<Constraint>, class: u8, tree: usize) -> Rule {
        Rule {
            constraints,
            predicted_class: class,
            source_trees: vec![tree],
            importance: 0.0,
        }
    }

    fn labeled(rows: Vec<Vec<Value>>, labels: Vec<u8>) -> SyntheticSet {
        SyntheticSet {
            center: rows[0].clone(),
            rows,
            labels: Some(labels),
            radius: 0.1,
            seed: 0,
        }
    }

    /// Tree splitting f0 < 5, then f0 < 2 on the left branch.
    fn nested_tree() -> Tree {
        let node = |id, split: Option<Split>, children, y_mean, n| Node {
            id,
            split,
            children,
            y_mean,
            n_samples: n,
        };
        Tree {
            nodes: vec![
                node(
                    0,
                    Some(Split::Below {
                        feature: 0,
                        threshold: 5.0,
                    }),
                    Some([1, 4]),
                    0.5,
                    20,
                ),
                node(
                    1,
                    Some(Split::Below {
                        feature: 0,
                        threshold: 2.0,
                    }),
                    Some([2, 3]),
                    0.2,
                    10,
                ),
                node(2, None, None, 0.0, 4),
                node(3, None, None, 1.0 / 3.0, 6),
                node(4, None, None, 0.8, 10),
            ],
        }
    }

    #[test]
    fn leaf_tree_yields_empty_rule() {
        let f = forest_of(vec![leaf_tree(0.7, 5)], continuous_features(2, 0.0, 1.0));
        let rules = extract_rules(&f, &[Some(0.5), Some(0.5)]).unwrap();
        assert_eq!(rules.len(), 1);
        assert!(rules[0].is_empty());
        assert_eq!(rules[0].predicted_class, 1);
    }

    #[test]
    fn nested_bounds_merge() {
        let f = forest_of(vec![nested_tree()], continuous_features(1, 0.0, 10.0));
        let rules = extract_rules(&f, &[Some(1.0)]).unwrap();
        assert_eq!(rules[0].constraints, vec![c(0, Condition::Below(2.0))]);
        assert_eq!(rules[0].predicted_class, 0);
        let rules = extract_rules(&f, &[Some(3.0)]).unwrap();
        assert_eq!(
            rules[0].constraints,
            vec![c(0, Condition::AtLeast(2.0)), c(0, Condition::Below(5.0))]
        );
        assert!(rules[0].covers(&[Some(3.0)]));
    }

    #[test]
    fn categorical_and_missing_constraints() {
        let mut tree = stump(0, 0.0, (0.1, 5), (0.7, 5));
        tree.nodes[0].split = Some(Split::InLevels {
            feature: 0,
            levels: vec![1],
        });
        let f = forest_of(vec![tree], vec![FeatureMeta::categorical("c", ["a", "b", "c"])]);
        let r = &extract_rules(&f, &[Some(2.0)]).unwrap()[0];
        assert_eq!(r.constraints, vec![c(0, Condition::InLevels(vec![0, 2]))]);
        let r = &extract_rules(&f, &[None]).unwrap()[0];
        assert_eq!(r.constraints, vec![c(0, Condition::Missing)]);
        assert!(r.covers(&[None]) && !r.covers(&[Some(0.0)]));
        let doc = r.to_doc(&f.features);
        assert_eq!(doc.constraints[0].op, "missing");
    }

    #[test]
    fn prune_drops_irrelevant_constraint() {
        // labels depend on f0 only; the f1 constraint is irrelevant
        let rows: Vec<Vec<Value>> = (0..40)
            .map(|i| vec![Some((i % 10) as f64), Some((i / 10) as f64)])
            .collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0].unwrap() >= 5.0)).collect();
        let set = labeled(rows, labels);
        let r = rule(vec![c(0, Condition::AtLeast(5.0)), c(1, Condition::Below(2.0))], 1, 0);
        let pruned = prune_rule(&r, &set, 0.0).unwrap();
        assert_eq!(pruned.constraints, vec![c(0, Condition::AtLeast(5.0))]);
    }

    #[test]
    fn prune_keeps_necessary_constraints_and_empty_rules() {
        let rows: Vec<Vec<Value>> = (0..10).map(|i| vec![Some(i as f64)]).collect();
        let labels: Vec<u8> = (0..10).map(|i| u8::from(i >= 5)).collect();
        let set = labeled(rows, labels);
        let r = rule(vec![c(0, Condition::AtLeast(5.0))], 1, 0);
        assert_eq!(prune_rule(&r, &set, 0.0).unwrap(), r);
        let empty = rule(vec![], 1, 0);
        assert_eq!(prune_rule(&empty, &set, 0.5).unwrap(), empty);
        // a 50% drop is tolerated at epsilon 0.5
        assert!(prune_rule(&r, &set, 0.5).unwrap().is_empty());
    }

    #[test]
    fn prune_errors() {
        let empty = SyntheticSet {
            rows: vec![],
            labels: Some(vec![]),
            center: vec![],
            radius: 0.1,
            seed: 0,
        };
        assert!(matches!(
            prune_rule(&rule(vec![], 1, 0), &empty, 0.0),
            Err(RuleError::EmptySet)
        ));
        let unlabeled = SyntheticSet {
            labels: None,
            ..labeled(vec![vec![Some(1.0)]], vec![1])
        };
        assert!(matches!(
            prune_rule(&rule(vec![], 1, 0), &unlabeled, 0.0),
            Err(RuleError::Unlabeled)
        ));
    }

    #[test]
    fn dedupe_merges_sources_and_respects_class() {
        let a = rule(vec![c(0, Condition::Below(2.0)), c(1, Condition::AtLeast(1.0))], 0, 3);
        let b = rule(vec![c(1, Condition::AtLeast(1.0)), c(0, Condition::Below(2.0))], 0, 7);
        let other_class = rule(vec![c(0, Condition::Below(2.0)), c(1, Condition::AtLeast(1.0))], 1, 9);
        let out = dedupe_rules(vec![a, b, other_class]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].source_trees, vec![3, 7]);
        assert_eq!(out[1].source_trees, vec![9]);
        assert_eq!(dedupe_rules(out.clone()), out);
    }

    #[test]
    fn perfect_single_rule_gets_full_importance() {
        let rows: Vec<Vec<Value>> = (0..50).map(|i| vec![Some(i as f64)]).collect();
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i < 20)).collect();
        let set = labeled(rows, labels);
        let r = rule(vec![c(0, Condition::Below(20.0))], 1, 0);
        assert_eq!(rule_importance(&[r], &set, 0.9, 1).unwrap(), vec![1.0]);
        assert!(matches!(rule_importance(&[], &set, 0.9, 1), Err(RuleError::NoRules)));
    }

    #[test]
    fn disagreeing_rules_score_zero() {
        let rows: Vec<Vec<Value>> = (0..50).map(|i| vec![Some(i as f64)]).collect();
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i < 20)).collect();
        let set = labeled(rows, labels);
        let sharp = rule(vec![c(0, Condition::Below(20.0))], 1, 0);
        let everything = rule(vec![c(0, Condition::AtLeast(-1.0))], 0, 1);
        let wrong_way = rule(vec![c(0, Condition::AtLeast(45.0))], 1, 2);
        let empty = rule(vec![c(0, Condition::AtLeast(99.0))], 0, 3);
        let all = [sharp, everything, wrong_way, empty];
        assert_eq!(agreeing_rules(&all, &set).unwrap(), vec![0, 1]);
        assert_eq!(rule_accuracy(&all[1], &set).unwrap(), 0.6);
        let scores = rule_importance(&all, &set, 0.9, 1).unwrap();
        assert_eq!(scores, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_set_scores_by_length_alone() {
        let rows: Vec<Vec<Value>> = (0..30).map(|i| vec![Some(i as f64), Some(0.0)]).collect();
        let set = labeled(rows, vec![0; 30]);
        let short = rule(vec![c(0, Condition::Below(40.0))], 0, 0);
        let long = rule(vec![c(0, Condition::Below(40.0)), c(1, Condition::Below(1.0))], 0, 1);
        let scores = rule_importance(&[short, long], &set, 0.5, 1).unwrap();
        assert_eq!(scores, vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn widths_are_absolute_contributions() {
        let cv = ContributionVector {
            instance_id: None,
            target_class: 1,
            feature_names: vec!["a".into(), "b".into()],
            contributions: vec![-0.3, 0.0],
            baseline: 0.5,
            prediction: 0.2,
        };
        let r = rule(vec![c(0, Condition::Below(1.0)), c(1, Condition::AtLeast(0.0))], 0, 0);
        assert_eq!(constraint_widths(&r, &cv).unwrap(), vec![0.3, 0.0]);
        let bad = rule(vec![c(2, Condition::Missing)], 0, 0);
        assert!(matches!(
            constraint_widths(&bad, &cv),
            Err(RuleError::UnknownFeature(2))
        ));
    }

    #[test]
    fn empty_rule_set_fidelity_is_majority_share() {
        let rows: Vec<Vec<Value>> = (0..10).map(|i| vec![Some(i as f64)]).collect();
        let set = labeled(rows, vec![1, 1, 1, 0, 0, 0, 0, 1, 1, 1]);
        let majority = set.majority_label(1).unwrap();
        assert_eq!(majority, 1);
        assert_eq!(fidelity(&[], &set, majority).unwrap(), 0.6);
    }

    #[test]
    fn config_defaults_fill_partial_json() {
        let cfg: RuleConfig = serde_json::from_str(r#"{"delta":0.3,"seeds":{"sampling":7}}"#).unwrap();
        assert_eq!(cfg.delta, 0.3);
        assert_eq!(cfg.m, 2000);
        assert_eq!(
            cfg.seeds,
            RuleSeeds {
                sampling: 7,
                importance: 43
            }
        );
        assert!(serde_json::from_str::<RuleConfig>(r#"{"deltaa":0.3}"#).is_err());
        assert!(RuleConfig {
            gamma: 1.5,
            ..RuleConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn leaf_forest_collapses_to_one_rule() {
        let f = forest_of(
            vec![leaf_tree(0.3, 5), leaf_tree(0.2, 5), leaf_tree(0.1, 5)],
            continuous_features(2, 0.0, 1.0),
        );
        let trace = explain_rules_traced(&f, &[Some(0.5), Some(0.5)], &RuleConfig::default()).unwrap();
        assert_eq!(trace.deduped.len(), 1);
        assert_eq!(trace.deduped[0].source_trees, vec![0, 1, 2]);
        let set = &trace.set;
        let majority = set.majority_label(1).unwrap();
        let share = set.labels.as_ref().unwrap().iter().filter(|&&l| l == majority).count() as f64 / set.len() as f64;
        assert_eq!(trace.explanation.fidelity, share);
        assert_eq!(share, 1.0);
    }
}
