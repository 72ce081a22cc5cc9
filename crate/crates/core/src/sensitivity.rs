//! Partial dependence: local curves, ICE bundles and global mean curves.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, FeatureKind, Value};
use crate::forest::{Forest, ForestError};

pub const DEFAULT_GRID_POINTS: usize = 50;

/// Curves whose score span is below this are tagged flat.
pub const FLAT_SPAN: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` has a zero-width range")]
    DegenerateRange(String),
    #[error("grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("requested {requested} curves from {available} rows")]
    TooManyCurves { requested: usize, available: usize },
    #[error("dataset is empty")]
    EmptyData,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

pub type Result<T, E = SensitivityError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Local,
    GlobalMean,
    IceMember,
}

/// The explained instance's own feature value and score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: Option<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdCurve {
    pub feature: String,
    pub kind: CurveKind,
    /// Grid in feature units; level indices for categorical features.
    pub xs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
    pub ys: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Anchor>,
    /// Dataset row of an ICE member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub flat: bool,
}

impl PdCurve {
    fn new(feature: &str, kind: CurveKind, grid: &Grid, ys: Vec<f64>) -> Self {
        let flat = is_flat(&ys);
        PdCurve {
            feature: feature.to_string(),
            kind,
            xs: grid.xs.clone(),
            levels: grid.levels.clone(),
            ys,
            anchor: None,
            row: None,
            flat,
        }
    }
}

pub fn is_flat(ys: &[f64]) -> bool {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
        (lo.min(y), hi.max(y))
    });
    ys.is_empty() || hi - lo < FLAT_SPAN
}

struct Grid {
    feature: usize,
    xs: Vec<f64>,
    levels: Option<Vec<String>>,
}

/// `n` equally spaced points over the feature's sentinel-free range, or
/// every level of a categorical feature.
fn grid(forest: &Forest, feature: &str, n: usize) -> Result<Grid> {
    let j = forest
        .feature_index(feature)
        .map_err(|_| SensitivityError::UnknownFeature(feature.to_string()))?;
    match &forest.features[j].kind {
        FeatureKind::Categorical { levels } => Ok(Grid {
            feature: j,
            xs: (0..levels.len()).map(|l| l as f64).collect(),
            levels: Some(levels.clone()),
        }),
        FeatureKind::Continuous { range: [min, max] } => {
            if n < 2 {
                return Err(SensitivityError::InvalidGrid(n));
            }
            if min >= max {
                return Err(SensitivityError::DegenerateRange(feature.to_string()));
            }
            let step = (max - min) / (n - 1) as f64;
            let xs = (0..n)
                .map(|i| if i == n - 1 { *max } else { min + step * i as f64 })
                .collect();
            Ok(Grid {
                feature: j,
                xs,
                levels: None,
            })
        }
    }
}

/// Scores of `instance` with `feature` replaced by each of `xs`.
pub fn scores_at(forest: &Forest, instance: &[Value], feature: usize, xs: &[f64]) -> Result<Vec<f64>> {
    forest.check_instance(instance)?;
    Ok(scores_unchecked(forest, instance, feature, xs))
}

fn scores_unchecked(forest: &Forest, instance: &[Value], feature: usize, xs: &[f64]) -> Vec<f64> {
    let mut probe = instance.to_vec();
    xs.iter()
        .map(|&x| {
            probe[feature] = Some(x);
            forest.predict_unchecked(&probe)
        })
        .collect()
}

/// Local partial dependence of one instance on one feature.
pub fn local_pd(forest: &Forest, instance: &[Value], feature: &str, n: usize) -> Result<PdCurve> {
    let grid = grid(forest, feature, n)?;
    let ys = scores_at(forest, instance, grid.feature, &grid.xs)?;
    let mut curve = PdCurve::new(feature, CurveKind::Local, &grid, ys);
    curve.anchor = Some(Anchor {
        x: instance[grid.feature],
        y: forest.predict_unchecked(instance),
    });
    Ok(curve)
}

fn check_rows(forest: &Forest, dataset: &Dataset) -> Result<()> {
    if dataset.n_rows() == 0 {
        return Err(SensitivityError::EmptyData);
    }
    if dataset.n_features() != forest.n_features() {
        return Err(ForestError::ArityMismatch {
            expected: forest.n_features(),
            got: dataset.n_features(),
        }
        .into());
    }
    Ok(())
}

/// Local curves for `k` rows drawn without replacement, in row order.
pub fn ice_curves(
    forest: &Forest,
    dataset: &Dataset,
    feature: &str,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<PdCurve>> {
    let grid = grid(forest, feature, n)?;
    check_rows(forest, dataset)?;
    if k > dataset.n_rows() {
        return Err(SensitivityError::TooManyCurves {
            requested: k,
            available: dataset.n_rows(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, dataset.n_rows(), k).into_vec();
    rows.sort_unstable();
    rows.into_par_iter()
        .map(|r| {
            let instance = &dataset.rows[r];
            let ys = scores_at(forest, instance, grid.feature, &grid.xs)?;
            let mut curve = PdCurve::new(feature, CurveKind::IceMember, &grid, ys);
            curve.anchor = Some(Anchor {
                x: instance[grid.feature],
                y: forest.predict_unchecked(instance),
            });
            curve.row = Some(r);
            Ok(curve)
        })
        .collect()
}

/// Pointwise mean of the local curves of every dataset row.
pub fn global_pd(forest: &Forest, dataset: &Dataset, feature: &str, n: usize) -> Result<PdCurve> {
    let grid = grid(forest, feature, n)?;
    check_rows(forest, dataset)?;
    let per_row: Vec<Vec<f64>> = dataset
        .rows
        .par_iter()
        .map(|row| scores_at(forest, row, grid.feature, &grid.xs))
        .collect::<Result<_>>()?;
    let ys = mean_pointwise(per_row.iter().map(Vec::as_slice), grid.xs.len());
    Ok(PdCurve::new(feature, CurveKind::GlobalMean, &grid, ys))
}

/// Pointwise mean, accumulated in iteration order.
pub fn mean_pointwise<'a>(curves: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut sums = vec![0.0; len];
    let mut count = 0usize;
    for ys in curves {
        for (s, y) in sums.iter_mut().zip(ys) {
            *s += y;
        }
        count += 1;
    }
    sums.into_iter().map(|s| s / count as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMeta;
    use crate::forest::test_util::*;

    fn stump_forest() -> Forest {
        forest_of(
            vec![stump(0, 5.0, (0.2, 5), (0.8, 5))],
            continuous_features(2, 0.0, 10.0),
        )
    }

    #[test]
    fn unused_feature_is_flat() {
        let f = stump_forest();
        let inst = [Some(3.0), Some(4.0)];
        let c = local_pd(&f, &inst, "f1", 10).unwrap();
        let p = f.predict_proba(&inst).unwrap();
        assert!(c.ys.iter().all(|&y| y == p));
        assert!(c.flat);
    }

    #[test]
    fn single_stump_step() {
        let f = stump_forest();
        let c = local_pd(&f, &[Some(3.0), Some(4.0)], "f0", 10).unwrap();
        assert_eq!(c.xs.len(), 10);
        assert_eq!(c.xs[0], 0.0);
        assert_eq!(c.xs[9], 10.0);
        for (x, y) in c.xs.iter().zip(&c.ys) {
            assert_eq!(*y, if *x < 5.0 { 0.2 } else { 0.8 });
        }
        assert!(!c.flat);
        assert_eq!(c.anchor, Some(Anchor { x: Some(3.0), y: 0.2 }));
    }

    #[test]
    fn anchor_identity() {
        let f = stump_forest();
        let inst = [Some(6.5), None];
        let own = scores_at(&f, &inst, 0, &[6.5]).unwrap();
        assert_eq!(own[0], f.predict_proba(&inst).unwrap());
    }

    #[test]
    fn errors() {
        let f = stump_forest();
        let inst = [Some(1.0), Some(1.0)];
        assert!(matches!(
            local_pd(&f, &inst, "zz", 10),
            Err(SensitivityError::UnknownFeature(_))
        ));
        assert!(matches!(
            local_pd(&f, &inst, "f0", 1),
            Err(SensitivityError::InvalidGrid(1))
        ));
        let g = forest_of(vec![leaf_tree(0.5, 2)], continuous_features(1, 3.0, 3.0));
        assert!(matches!(
            local_pd(&g, &[Some(3.0)], "f0", 5),
            Err(SensitivityError::DegenerateRange(_))
        ));
        assert!(matches!(
            local_pd(&f, &[Some(1.0)], "f0", 5),
            Err(SensitivityError::Forest(_))
        ));
    }

    #[test]
    fn categorical_grid_enumerates_levels() {
        let mut tree = stump(0, 0.0, (0.1, 5), (0.7, 5));
        tree.nodes[0].split = Some(crate::forest::Split::InLevels {
            feature: 0,
            levels: vec![1],
        });
        let f = forest_of(vec![tree], vec![FeatureMeta::categorical("c", ["a", "b", "c"])]);
        let c = local_pd(&f, &[Some(0.0)], "c", 2).unwrap();
        assert_eq!(c.xs, vec![0.0, 1.0, 2.0]);
        assert_eq!(c.levels.as_deref().unwrap(), ["a", "b", "c"]);
        assert_eq!(c.ys, vec![0.7, 0.1, 0.7]);
    }

    #[test]
    fn single_row_global_equals_local() {
        let f = stump_forest();
        let ds = Dataset::from_columns(&["f0", "f1"], vec![vec![Some(7.0), Some(1.0)]], vec![1]).unwrap();
        let g = global_pd(&f, &ds, "f0", 6).unwrap();
        let l = local_pd(&f, &ds.rows[0], "f0", 6).unwrap();
        assert_eq!(g.ys, l.ys);
        assert_eq!(g.kind, CurveKind::GlobalMean);
    }

    #[test]
    fn leaf_forest_global_is_flat() {
        let f = forest_of(vec![leaf_tree(0.35, 4)], continuous_features(1, 0.0, 1.0));
        let ds = Dataset::from_columns(&["f0"], vec![vec![Some(0.0)], vec![Some(1.0)]], vec![0, 1]).unwrap();
        let g = global_pd(&f, &ds, "f0", 5).unwrap();
        assert_eq!(g.ys, vec![0.35; 5]);
        assert!(g.flat);
    }

    #[test]
    fn ice_reductions() {
        let f = stump_forest();
        let rows: Vec<Vec<Value>> = (0..10).map(|i| vec![Some(i as f64), Some(1.0)]).collect();
        let ds = Dataset::from_columns(&["f0", "f1"], rows, vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        let one = ice_curves(&f, &ds, "f0", 8, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        let r = one[0].row.unwrap();
        assert_eq!(one[0].ys, local_pd(&f, &ds.rows[r], "f0", 8).unwrap().ys);

        let all = ice_curves(&f, &ds, "f0", 8, 10, 3).unwrap();
        let mean = mean_pointwise(all.iter().map(|c| c.ys.as_slice()), 8);
        assert_eq!(mean, global_pd(&f, &ds, "f0", 8).unwrap().ys);
        assert!(matches!(
            ice_curves(&f, &ds, "f0", 8, 11, 3),
            Err(SensitivityError::TooManyCurves { .. })
        ));
    }
}
