//! Synthetic neighbourhoods: uniform n-ball samples around an instance in
//! range-normalized space, hard-labelled by the reference forest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Result, RuleError};
use crate::data::{FeatureKind, FeatureMeta, Value};
use crate::forest::{Forest, ForestError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub rows: Vec<Vec<Value>>,
    /// Forest labels, filled by [`label_synthetic`].
    pub labels: Option<Vec<u8>>,
    pub center: Vec<Value>,
    pub radius: f64,
    pub seed: u64,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn labels(&self) -> Result<&[u8]> {
        if self.rows.is_empty() {
            return Err(RuleError::EmptySet);
        }
        self.labels.as_deref().ok_or(RuleError::Unlabeled)
    }

    /// Majority label; ties go to `tie_class`.
    pub fn majority_label(&self, tie_class: u8) -> Result<u8> {
        let labels = self.labels()?;
        let ones = labels.iter().filter(|&&l| l == 1).count();
        let zeros = labels.len() - ones;
        Ok(match ones.cmp(&zeros) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => tie_class,
        })
    }
}

/// A continuous coordinate sampled inside the ball: `(index, min, max)`.
fn ball_dims(center: &[Value], features: &[FeatureMeta]) -> Vec<(usize, f64, f64)> {
    features
        .iter()
        .enumerate()
        .filter_map(|(j, meta)| match (&meta.kind, center[j]) {
            (FeatureKind::Continuous { range: [min, max] }, Some(_)) if max > min => Some((j, *min, *max)),
            _ => None,
        })
        .collect()
}

/// Euclidean distance between two rows over the continuous coordinates
/// that take part in the ball, each scaled by its feature range.
pub fn normalized_distance(a: &[Value], b: &[Value], features: &[FeatureMeta]) -> f64 {
    ball_dims(a, features)
        .into_iter()
        .filter_map(|(j, min, max)| Some(((a[j]? - b[j]?) / (max - min)).powi(2)))
        .sum::<f64>()
        .sqrt()
}

/// Draws `count` rows uniformly from the ball of radius `radius` around
/// `center`, where every continuous feature is scaled to unit range.
/// Coordinates are clipped to the feature range (widened to include the
/// center). Zero-width and missing continuous coordinates are held at the
/// center value. A categorical coordinate keeps the center level with
/// probability `1 - flip_probability` and otherwise moves to a uniformly
/// chosen other level.
pub fn sample_nball(
    center: &[Value],
    radius: f64,
    count: usize,
    features: &[FeatureMeta],
    flip_probability: f64,
    seed: u64,
) -> Result<SyntheticSet> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(RuleError::InvalidRadius(radius));
    }
    if count == 0 {
        return Err(RuleError::InvalidConfig("sample count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&flip_probability) {
        return Err(RuleError::InvalidConfig(format!(
            "flip probability must lie in [0, 1], got {flip_probability}"
        )));
    }
    if center.len() != features.len() {
        return Err(ForestError::ArityMismatch {
            expected: features.len(),
            got: center.len(),
        }
        .into());
    }

    let dims = ball_dims(center, features);
    let categorical: Vec<(usize, usize)> = features
        .iter()
        .enumerate()
        .filter_map(|(j, meta)| match (meta.levels(), center[j]) {
            (Some(levels), Some(_)) if levels.len() > 1 => Some((j, levels.len())),
            _ => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut direction = vec![0.0f64; dims.len()];
    let rows = (0..count)
        .map(|_| {
            let mut row = center.to_vec();
            if !dims.is_empty() {
                let norm = loop {
                    for d in direction.iter_mut() {
                        *d = rng.sample(StandardNormal);
                    }
                    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        break norm;
                    }
                };
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / dims.len() as f64);
                for (&(j, min, max), d) in dims.iter().zip(&direction) {
                    let c = center[j].expect("ball coordinates are present");
                    let x = c + d / norm * r * (max - min);
                    row[j] = Some(x.clamp(min.min(c), max.max(c)));
                }
            }
            for &(j, n_levels) in &categorical {
                let flip: f64 = rng.random();
                if flip < flip_probability {
                    let c = center[j].expect("categorical center is present") as usize;
                    let other = rng.random_range(0..n_levels - 1);
                    row[j] = Some(if other >= c { other + 1 } else { other } as f64);
                }
            }
            row
        })
        .collect();

    Ok(SyntheticSet {
        rows,
        labels: None,
        center: center.to_vec(),
        radius,
        seed,
    })
}

/// Hard labels: the forest's target class iff its score is at least 0.5.
pub fn label_synthetic(forest: &Forest, set: SyntheticSet) -> Result<SyntheticSet> {
    let labels = set
        .rows
        .iter()
        .map(|row| forest.predict_class(row))
        .collect::<Result<Vec<u8>, ForestError>>()?;
    Ok(SyntheticSet {
        labels: Some(labels),
        ..set
    })
}
