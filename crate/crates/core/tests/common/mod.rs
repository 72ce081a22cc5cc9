#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::Rng;
use rfexplain_core::data::{load_csv, Dataset, FeatureMeta, Value};
use rfexplain_core::forest::{Forest, Node, Split, TrainParams, Tree};

pub fn pima_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/pima.csv")
}

pub fn pima() -> &'static Dataset {
    static PIMA: OnceLock<Dataset> = OnceLock::new();
    PIMA.get_or_init(|| load_csv(pima_path(), "Outcome", &HashMap::new()).unwrap())
}

/// Default parameters, seed 42.
pub fn pima_forest() -> &'static Forest {
    static FOREST: OnceLock<Forest> = OnceLock::new();
    FOREST.get_or_init(|| Forest::train(pima(), &TrainParams::default()).unwrap())
}

/// Random tree of depth at most `max_depth` over `n_features` continuous
/// features on [0, 10], with consistent counts and class fractions.
pub fn random_tree(rng: &mut impl Rng, max_depth: usize, n_features: usize) -> Tree {
    fn grow(rng: &mut impl Rng, nodes: &mut Vec<Node>, n: usize, pos: usize, depth: usize, p: usize) -> usize {
        let id = nodes.len();
        nodes.push(Node {
            id,
            split: None,
            children: None,
            y_mean: pos as f64 / n as f64,
            n_samples: n,
        });
        if depth == 0 || n < 2 || rng.random_bool(0.2) {
            return id;
        }
        let n_left = rng.random_range(1..n);
        let n_right = n - n_left;
        let lo = pos.saturating_sub(n_right);
        let pos_left = rng.random_range(lo..=pos.min(n_left));
        let split = Split::Below {
            feature: rng.random_range(0..p),
            threshold: rng.random_range(0.0..10.0),
        };
        let left = grow(rng, nodes, n_left, pos_left, depth - 1, p);
        let right = grow(rng, nodes, n_right, pos - pos_left, depth - 1, p);
        nodes[id].split = Some(split);
        nodes[id].children = Some([left, right]);
        id
    }
    let n = rng.random_range(2..200);
    let pos = rng.random_range(0..=n);
    let mut nodes = Vec::new();
    grow(rng, &mut nodes, n, pos, max_depth, n_features);
    Tree { nodes }
}

pub fn forest_of(trees: Vec<Tree>, features: Vec<FeatureMeta>) -> Forest {
    Forest {
        trees,
        target_class: 1,
        features,
        params: TrainParams::default(),
        oob: None,
    }
}

pub fn unit_features(n: usize) -> Vec<FeatureMeta> {
    (0..n)
        .map(|j| FeatureMeta::continuous(format!("f{j}"), 0.0, 10.0))
        .collect()
}

pub fn random_instance(rng: &mut impl Rng, n_features: usize, missing_rate: f64) -> Vec<Value> {
    (0..n_features)
        .map(|_| {
            if rng.random_bool(missing_rate) {
                None
            } else {
                Some(rng.random_range(0.0..10.0))
            }
        })
        .collect()
}

/// Single stump on `f0` at 5.0 with the given leaf fractions.
pub fn stump_forest(left: f64, right: f64) -> Forest {
    let tree = Tree {
        nodes: vec![
            Node {
                id: 0,
                split: Some(Split::Below {
                    feature: 0,
                    threshold: 5.0,
                }),
                children: Some([1, 2]),
                y_mean: (left + right) / 2.0,
                n_samples: 20,
            },
            Node {
                id: 1,
                split: None,
                children: None,
                y_mean: left,
                n_samples: 10,
            },
            Node {
                id: 2,
                split: None,
                children: None,
                y_mean: right,
                n_samples: 10,
            },
        ],
    };
    forest_of(vec![tree], unit_features(1))
}

/// Contributions computed by walking every edge of the tree in id order and
/// keeping the ones whose parent is reached and whose predicate holds.
pub fn edge_oracle(tree: &Tree, instance: &[Value], n_features: usize) -> Vec<f64> {
    let mut reached = vec![false; tree.nodes.len()];
    reached[0] = true;
    let mut out = vec![0.0; n_features];
    for parent in &tree.nodes {
        let (Some(Split::Below { feature, threshold }), Some([l, r])) = (&parent.split, parent.children) else {
            continue;
        };
        if !reached[parent.id] {
            continue;
        }
        let left_taken = match instance[*feature] {
            Some(v) => v < *threshold,
            None => tree.nodes[l].n_samples >= tree.nodes[r].n_samples,
        };
        for (child, taken) in [(l, left_taken), (r, !left_taken)] {
            if taken {
                reached[child] = true;
                out[*feature] += tree.nodes[child].y_mean - parent.y_mean;
            }
        }
    }
    out
}
