//! CART growth with Gini impurity decrease and bagging.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{oob_error_from, Forest, ForestError, Node, OobInfo, Result, Split, TrainParams, Tree};
use crate::data::{Dataset, Value};

/// Gains at or below this (in count-weighted Gini units) are treated as no gain.
const MIN_GAIN: f64 = 1e-12;

/// Checks `params` against `dataset` and resolves `features_per_split`.
pub(super) fn resolve_params(dataset: &Dataset, params: &TrainParams) -> Result<TrainParams> {
    let n_features = dataset.n_features();
    let mtry = params
        .features_per_split
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize);
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(ForestError::InvalidParams("min_samples_leaf must be at least 1".into()));
    }
    if n_features == 0 || mtry == 0 || mtry > n_features {
        return Err(ForestError::InvalidParams(format!(
            "features_per_split must lie in [1, {n_features}], got {mtry}"
        )));
    }
    if params.target_class > 1 {
        return Err(ForestError::InvalidParams("target_class must be 0 or 1".into()));
    }
    if dataset.n_rows() < 2 {
        return Err(ForestError::InvalidParams("at least 2 rows are required".into()));
    }
    if dataset.class_counts().contains(&0) {
        return Err(ForestError::SingleClass);
    }
    Ok(TrainParams {
        features_per_split: Some(mtry),
        ..params.clone()
    })
}

pub(super) fn train_forest(dataset: &Dataset, params: &TrainParams) -> Result<Forest> {
    let params = resolve_params(dataset, params)?;
    let grown: Vec<(Tree, Option<Vec<u32>>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(dataset, &params, t as u64))
        .collect();

    let (trees, oob_rows): (Vec<Tree>, Vec<Option<Vec<u32>>>) = grown.into_iter().unzip();
    let mut forest = Forest {
        trees,
        target_class: params.target_class,
        features: dataset.features.clone(),
        params,
        oob: None,
    };
    if forest.params.bootstrap {
        let per_tree: Vec<Vec<u32>> = oob_rows.into_iter().map(Option::unwrap_or_default).collect();
        let error = oob_error_from(&forest, &per_tree, dataset);
        forest.oob = Some(OobInfo {
            error,
            n_rows: dataset.n_rows(),
            per_tree_oob_rows: per_tree,
        });
    }
    Ok(forest)
}

fn grow_tree(dataset: &Dataset, params: &TrainParams, tree_index: u64) -> (Tree, Option<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(tree_index));
    let n = dataset.n_rows();
    let (rows, oob) = if params.bootstrap {
        let mut in_bag = vec![false; n];
        let rows: Vec<u32> = (0..n)
            .map(|_| {
                let r = rng.random_range(0..n);
                in_bag[r] = true;
                r as u32
            })
            .collect();
        let oob = (0..n as u32).filter(|&r| !in_bag[r as usize]).collect();
        (rows, Some(oob))
    } else {
        ((0..n as u32).collect(), None)
    };
    let mut grower = Grower {
        dataset,
        params,
        target: params.target_class,
        rng,
        nodes: Vec::new(),
    };
    grower.grow(rows, 0);
    (Tree { nodes: grower.nodes }, oob)
}

struct Grower<'a> {
    dataset: &'a Dataset,
    params: &'a TrainParams,
    target: u8,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

/// Class counts of a row multiset.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    n: usize,
    pos: usize,
}

impl Counts {
    fn add(&mut self, positive: bool) {
        self.n += 1;
        self.pos += usize::from(positive);
    }

    fn plus(self, other: Counts) -> Counts {
        Counts {
            n: self.n + other.n,
            pos: self.pos + other.pos,
        }
    }

    fn minus(self, other: Counts) -> Counts {
        Counts {
            n: self.n - other.n,
            pos: self.pos - other.pos,
        }
    }

    /// `n` times the Gini impurity.
    fn weighted_gini(self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        2.0 * self.pos as f64 * (self.n - self.pos) as f64 / self.n as f64
    }
}

struct Candidate {
    split: Split,
    gain: f64,
    /// Whether rows missing the split feature go left.
    missing_left: bool,
}

impl Grower<'_> {
    fn positive(&self, row: u32) -> bool {
        self.dataset.labels[row as usize] == self.target
    }

    fn value(&self, row: u32, feature: usize) -> Value {
        self.dataset.rows[row as usize][feature]
    }

    fn grow(&mut self, rows: Vec<u32>, depth: usize) -> usize {
        let mut counts = Counts::default();
        for &r in &rows {
            counts.add(self.positive(r));
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            split: None,
            children: None,
            y_mean: counts.pos as f64 / counts.n as f64,
            n_samples: counts.n,
        });

        let pure = counts.pos == 0 || counts.pos == counts.n;
        if depth >= self.params.max_depth || pure || counts.n < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, counts) else {
            return id;
        };

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| match self.value(r, best.split.feature()) {
                Some(v) => best.split.goes_left(v),
                None => best.missing_left,
            });
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        let node = &mut self.nodes[id];
        node.split = Some(best.split);
        node.children = Some([left, right]);
        id
    }

    fn best_split(&mut self, rows: &[u32], total: Counts) -> Option<Candidate> {
        let n_features = self.dataset.n_features();
        let mtry = self.params.features_per_split.unwrap_or(n_features);
        let mut features = index::sample(&mut self.rng, n_features, mtry).into_vec();
        features.sort_unstable();

        let parent = total.weighted_gini();
        let mut best: Option<Candidate> = None;
        for feature in features {
            let candidate = if self.dataset.features[feature].is_categorical() {
                self.best_categorical(rows, feature, parent)
            } else {
                self.best_continuous(rows, feature, parent)
            };
            if let Some(c) = candidate {
                if c.gain > MIN_GAIN && best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Left/right counts after sending missing rows to the side with more
    /// present rows, or `None` when either side is below the leaf minimum.
    fn with_missing(&self, left: Counts, right: Counts, missing: Counts) -> Option<(Counts, Counts, bool)> {
        let missing_left = left.n >= right.n;
        let (l, r) = if missing_left {
            (left.plus(missing), right)
        } else {
            (left, right.plus(missing))
        };
        let min = self.params.min_samples_leaf;
        (l.n >= min && r.n >= min).then_some((l, r, missing_left))
    }

    fn best_continuous(&self, rows: &[u32], feature: usize, parent: f64) -> Option<Candidate> {
        let mut present: Vec<(f64, bool)> = Vec::with_capacity(rows.len());
        let mut missing = Counts::default();
        for &r in rows {
            match self.value(r, feature) {
                Some(v) => present.push((v, self.positive(r))),
                None => missing.add(self.positive(r)),
            }
        }
        present.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut all = Counts::default();
        for &(_, p) in &present {
            all.add(p);
        }

        let mut best: Option<Candidate> = None;
        let mut left = Counts::default();
        for i in 0..present.len().saturating_sub(1) {
            left.add(present[i].1);
            let (lo, hi) = (present[i].0, present[i + 1].0);
            if lo == hi {
                continue;
            }
            let Some((l, r, missing_left)) = self.with_missing(left, all.minus(left), missing) else {
                continue;
            };
            let gain = parent - l.weighted_gini() - r.weighted_gini();
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold <= lo {
                    threshold = hi;
                }
                best = Some(Candidate {
                    split: Split::Below { feature, threshold },
                    gain,
                    missing_left,
                });
            }
        }
        best
    }

    /// Greedy level grouping: start from the best one-vs-rest level, then
    /// keep adding the level that most improves the gain.
    fn best_categorical(&self, rows: &[u32], feature: usize, parent: f64) -> Option<Candidate> {
        let n_levels = self.dataset.features[feature].levels().map_or(0, <[String]>::len);
        let mut per_level = vec![Counts::default(); n_levels];
        let mut missing = Counts::default();
        for &r in rows {
            match self.value(r, feature) {
                Some(v) => per_level[v as usize].add(self.positive(r)),
                None => missing.add(self.positive(r)),
            }
        }
        let present: Vec<usize> = (0..n_levels).filter(|&l| per_level[l].n > 0).collect();
        if present.len() < 2 {
            return None;
        }
        let all = present.iter().fold(Counts::default(), |acc, &l| acc.plus(per_level[l]));

        let evaluate = |group: &[usize]| -> Option<(f64, bool)> {
            let left = group.iter().fold(Counts::default(), |acc, &l| acc.plus(per_level[l]));
            let (l, r, missing_left) = self.with_missing(left, all.minus(left), missing)?;
            Some((parent - l.weighted_gini() - r.weighted_gini(), missing_left))
        };

        let mut group: Vec<usize> = Vec::new();
        let mut best: Option<(Vec<usize>, f64, bool)> = None;
        while group.len() + 1 < present.len() {
            let mut step: Option<(usize, f64, bool)> = None;
            for &level in present.iter().filter(|l| !group.contains(l)) {
                let mut trial = group.clone();
                trial.push(level);
                if let Some((gain, ml)) = evaluate(&trial) {
                    if step.is_none_or(|(_, g, _)| gain > g) {
                        step = Some((level, gain, ml));
                    }
                }
            }
            let Some((level, gain, ml)) = step else { break };
            if let Some((_, best_gain, _)) = &best {
                if gain <= *best_gain {
                    break;
                }
            }
            group.push(level);
            best = Some((group.clone(), gain, ml));
        }

        best.map(|(mut levels, gain, missing_left)| {
            levels.sort_unstable();
            Candidate {
                split: Split::InLevels {
                    feature,
                    levels: levels.into_iter().map(|l| l as u32).collect(),
                },
                gain,
                missing_left,
            }
        })
    }
}
