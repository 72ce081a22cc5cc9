mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfexplain_core::contribution::{forest_contribution, tree_contribution};
use rfexplain_core::data::{Dataset, Value};
use rfexplain_core::forest::{Node, Split, Tree};
use rfexplain_core::sensitivity::{global_pd, local_pd};

#[test]
fn tree_contribution_matches_edge_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let p = rng.random_range(1..6);
        let tree = random_tree(&mut rng, 5, p);
        assert!(tree.depth() <= 5);
        for _ in 0..20 {
            let instance = random_instance(&mut rng, p, 0.1);
            assert_eq!(tree_contribution(&tree, &instance, p), edge_oracle(&tree, &instance, p));
        }
    }
}

#[test]
fn mdi_matches_hand_tally() {
    let node = |id, split: Option<Split>, children, y_mean, n| Node {
        id,
        split,
        children,
        y_mean,
        n_samples: n,
    };
    // Tree A: f0 turns 10 rows at 0.5 into 4 at 0 and 6 at 5/6: decrease 5 - 0 - 5/3 = 10/3.
    let a = Tree {
        nodes: vec![
            node(
                0,
                Some(Split::Below {
                    feature: 0,
                    threshold: 1.0,
                }),
                Some([1, 2]),
                0.5,
                10,
            ),
            node(1, None, None, 0.0, 4),
            node(2, None, None, 5.0 / 6.0, 6),
        ],
    };
    // Tree B: f1 turns 10 rows at 0.5 into 5 at 0.2 and 5 at 0.8: decrease 5 - 1.6 - 1.6 = 9/5.
    let b = Tree {
        nodes: vec![
            node(
                0,
                Some(Split::Below {
                    feature: 1,
                    threshold: 1.0,
                }),
                Some([1, 2]),
                0.5,
                10,
            ),
            node(1, None, None, 0.2, 5),
            node(2, None, None, 0.8, 5),
        ],
    };
    let mdi = forest_of(vec![a, b], unit_features(3)).global_importance_mdi();
    let expected = [50.0 / 77.0, 27.0 / 77.0, 0.0];
    for (got, want) in mdi.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12, "{mdi:?}");
    }
}

#[test]
fn decision_paths_replay_their_predicates() {
    let forest = pima_forest();
    let ds = pima();
    for row in ds.rows.iter().step_by(7) {
        for t in 0..forest.n_trees() {
            let tree = &forest.trees[t];
            let path = forest.decision_path(t, row).unwrap();
            assert_eq!(path[0], 0);
            assert!(tree.node(*path.last().unwrap()).is_leaf());
            for edge in path.windows(2) {
                let parent = tree.node(edge[0]);
                let split = parent.split.as_ref().unwrap();
                let [l, r] = parent.children.unwrap();
                let expect_left = match row[split.feature()] {
                    Some(v) => match split {
                        Split::Below { threshold, .. } => v < *threshold,
                        Split::InLevels { levels, .. } => levels.contains(&(v as u32)),
                    },
                    None => tree.node(l).n_samples >= tree.node(r).n_samples,
                };
                assert_eq!(edge[1], if expect_left { l } else { r });
            }
        }
    }
}

#[test]
fn global_pd_matches_brute_force_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trees = (0..4).map(|_| random_tree(&mut rng, 4, 3)).collect();
    let forest = forest_of(trees, unit_features(3));
    let rows: Vec<Vec<Value>> = (0..10).map(|_| random_instance(&mut rng, 3, 0.0)).collect();
    let ds = Dataset::new(
        forest.features.clone(),
        rows.clone(),
        (0..10).map(|i| (i % 2) as u8).collect(),
        ["0".into(), "1".into()],
    )
    .unwrap();
    for feature in ["f0", "f1", "f2"] {
        let j = forest.feature_index(feature).unwrap();
        let curve = global_pd(&forest, &ds, feature, 5).unwrap();
        assert_eq!(curve.xs, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        for (k, &x) in curve.xs.iter().enumerate() {
            let mut sum = 0.0;
            for row in &rows {
                let mut probe = row.clone();
                probe[j] = Some(x);
                sum += forest.predict_proba(&probe).unwrap();
            }
            assert_eq!(curve.ys[k], sum / 10.0);
        }
    }
}

#[test]
fn stump_pd_is_a_step_at_the_threshold() {
    let forest = stump_forest(0.2, 0.8);
    let curve = local_pd(&forest, &[Some(1.0)], "f0", 10).unwrap();
    for (x, y) in curve.xs.iter().zip(&curve.ys) {
        assert_eq!(*y, if *x < 5.0 { 0.2 } else { 0.8 }, "x = {x}");
    }
    assert!(!curve.flat);
}

#[test]
fn pima_contributions_telescope() {
    let forest = pima_forest();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let row = &pima().rows[rng.random_range(0..pima().n_rows())];
        let cv = forest_contribution(forest, row).unwrap();
        assert!(cv.residual().abs() <= 1e-9, "{}", cv.residual());
        assert_eq!(cv.prediction, forest.predict_proba(row).unwrap());
    }
}
