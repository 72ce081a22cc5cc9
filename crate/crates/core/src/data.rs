//! Tabular datasets: CSV ingestion, per-feature metadata, sentinel flagging
//! and per-class histograms.
//!
//! Cell values are stored as `Option<f64>`. `None` marks a missing cell.
//! Categorical cells hold the index of their level in [`FeatureMeta`].

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single cell value. `None` is missing.
pub type Value = Option<f64>;

/// Default frequency above which a candidate value is flagged as a sentinel.
pub const DEFAULT_SENTINEL_FRACTION: f64 = 0.05;

const MISSING_MARKERS: &[&str] = &["", "NA", "na", "N/A", "?", "NaN", "nan", "null", "NULL"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("bad label column: {0}")]
    BadLabel(String),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` is categorical")]
    CategoricalFeature(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Kind of a feature together with its observed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    /// `range` is `[min, max]` in feature units, sentinels excluded.
    Continuous {
        range: [f64; 2],
    },
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default)]
    pub sentinels: Vec<f64>,
    #[serde(default)]
    pub missing_count: usize,
}

impl FeatureMeta {
    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Continuous { range: [min, max] },
            sentinels: Vec::new(),
            missing_count: 0,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Self {
        FeatureMeta {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
            sentinels: Vec::new(),
            missing_count: 0,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    /// `(min, max)` for continuous features.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            FeatureKind::Continuous { range } => Some((range[0], range[1])),
            FeatureKind::Categorical { .. } => None,
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            FeatureKind::Continuous { .. } => None,
        }
    }

    pub fn is_sentinel(&self, value: f64) -> bool {
        self.sentinels.contains(&value)
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            FeatureKind::Continuous { range } => {
                if !(range[0].is_finite() && range[1].is_finite() && range[0] <= range[1]) {
                    return Err(DataError::Invalid(format!(
                        "feature `{}` has invalid range [{}, {}]",
                        self.name, range[0], range[1]
                    )));
                }
            }
            FeatureKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(DataError::Invalid(format!("feature `{}` has no levels", self.name)));
                }
                let unique: BTreeSet<&String> = levels.iter().collect();
                if unique.len() != levels.len() {
                    return Err(DataError::Invalid(format!(
                        "feature `{}` has duplicate levels",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-column kind override for [`load_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindHint {
    Continuous,
    Categorical,
}

/// Observed domain of one feature, as returned by [`Dataset::feature_ranges`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureRange {
    Continuous { name: String, min: f64, max: f64 },
    Categorical { name: String, levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<FeatureMeta>,
    pub rows: Vec<Vec<Value>>,
    pub labels: Vec<u8>,
    pub class_names: [String; 2],
}

/// Maps a feature value to its histogram bin.
type BinFn = Box<dyn Fn(f64) -> Option<usize>>;

/// Histogram of one feature split by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub feature: String,
    /// `bins + 1` edges for continuous features, empty for categorical ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bin_edges: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    pub class_names: [String; 2],
    pub per_class_counts: [Vec<usize>; 2],
    pub per_class_density: [Vec<f64>; 2],
    pub sentinels_excluded: bool,
}

impl ClassHistogram {
    pub fn bin_count(&self) -> usize {
        self.per_class_counts[0].len()
    }
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        features: Vec<FeatureMeta>,
        rows: Vec<Vec<Value>>,
        labels: Vec<u8>,
        class_names: [String; 2],
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            rows,
            labels,
            class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds an all-continuous dataset with ranges and missing counts taken
    /// from the data. Intended for programmatic and toy datasets.
    pub fn from_columns(names: &[&str], rows: Vec<Vec<Value>>, labels: Vec<u8>) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::EmptyData("no rows".into()));
        }
        let features = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let observed: Vec<f64> = rows.iter().filter_map(|r| r.get(j).copied().flatten()).collect();
                let (min, max) = min_max(observed.iter().copied()).unwrap_or((0.0, 0.0));
                let mut meta = FeatureMeta::continuous(*name, min, max);
                meta.missing_count = rows.len() - observed.len();
                meta
            })
            .collect();
        Dataset::new(features, rows, labels, ["0".to_string(), "1".to_string()])
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| DataError::UnknownFeature(name.to_string()))
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let positives = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - positives, positives]
    }

    pub fn validate(&self) -> Result<()> {
        for meta in &self.features {
            meta.validate()?;
        }
        if self.labels.len() != self.rows.len() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.rows.len()
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(DataError::Invalid(format!("label {bad} is not a class index")));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != self.features.len() {
                return Err(DataError::Invalid(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    self.features.len()
                )));
            }
            for (meta, value) in self.features.iter().zip(row) {
                let Some(v) = value else { continue };
                let ok = match &meta.kind {
                    FeatureKind::Categorical { levels } => {
                        v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < levels.len()
                    }
                    FeatureKind::Continuous { .. } => v.is_finite(),
                };
                if !ok {
                    return Err(DataError::Invalid(format!(
                        "row {i}: value {v} is not valid for feature `{}`",
                        meta.name
                    )));
                }
            }
        }
        for meta in &self.features {
            if meta.sentinels.is_empty() {
                continue;
            }
            let j = self.feature_index(&meta.name)?;
            for s in &meta.sentinels {
                if !self.rows.iter().any(|r| r[j] == Some(*s)) {
                    return Err(DataError::Invalid(format!(
                        "sentinel {s} of `{}` is never observed",
                        meta.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Flags every candidate whose exact value occurs in at least
    /// `min_fraction` of the feature's non-missing rows, and returns the
    /// updated metadata with the range recomputed without sentinels.
    /// The dataset itself is left untouched; see [`Dataset::with_feature_meta`].
    pub fn detect_sentinels(&self, feature: &str, candidates: &[f64], min_fraction: f64) -> Result<FeatureMeta> {
        let j = self.feature_index(feature)?;
        let meta = &self.features[j];
        if meta.is_categorical() {
            return Err(DataError::CategoricalFeature(feature.to_string()));
        }
        if !(min_fraction > 0.0 && min_fraction < 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "min_fraction must lie in (0, 1), got {min_fraction}"
            )));
        }
        let observed: Vec<f64> = self.rows.iter().filter_map(|r| r[j]).collect();
        let mut updated = meta.clone();
        if observed.is_empty() {
            return Ok(updated);
        }
        for &candidate in candidates {
            let hits = observed.iter().filter(|&&v| v == candidate).count();
            if hits > 0 && hits as f64 >= min_fraction * observed.len() as f64 && !updated.is_sentinel(candidate) {
                updated.sentinels.push(candidate);
            }
        }
        updated.sentinels.sort_by(f64::total_cmp);
        if let Some((min, max)) = min_max(observed.iter().copied().filter(|v| !updated.is_sentinel(*v))) {
            updated.kind = FeatureKind::Continuous { range: [min, max] };
        }
        Ok(updated)
    }

    /// Replaces the metadata of the feature with the same name.
    pub fn with_feature_meta(mut self, meta: FeatureMeta) -> Result<Self> {
        let j = self.feature_index(&meta.name)?;
        self.features[j] = meta;
        self.validate()?;
        Ok(self)
    }

    /// Runs [`Dataset::detect_sentinels`] on every continuous feature and
    /// applies the result.
    pub fn flag_sentinels(mut self, candidates: &[f64], min_fraction: f64) -> Result<Self> {
        for j in 0..self.features.len() {
            if !self.features[j].is_categorical() {
                let meta = self.detect_sentinels(&self.features[j].name.clone(), candidates, min_fraction)?;
                self.features[j] = meta;
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Observed domain of every feature, sentinels excluded.
    pub fn feature_ranges(&self) -> Result<Vec<FeatureRange>> {
        if self.rows.is_empty() {
            return Err(DataError::EmptyData("dataset has no rows".into()));
        }
        Ok(self
            .features
            .iter()
            .map(|meta| match &meta.kind {
                FeatureKind::Continuous { range } => FeatureRange::Continuous {
                    name: meta.name.clone(),
                    min: range[0],
                    max: range[1],
                },
                FeatureKind::Categorical { levels } => FeatureRange::Categorical {
                    name: meta.name.clone(),
                    levels: levels.clone(),
                },
            })
            .collect())
    }

    /// Per-class histogram of one feature. Continuous features use `bins`
    /// equal-width bins over the feature range, which excludes sentinels
    /// when `exclude_sentinels` is set and otherwise spans every observed
    /// value. Categorical features get one bin per level.
    pub fn class_histogram(&self, feature: &str, bins: usize, exclude_sentinels: bool) -> Result<ClassHistogram> {
        let j = self.feature_index(feature)?;
        let meta = &self.features[j];
        let (bin_edges, levels, bin_of): (Vec<f64>, Vec<String>, BinFn) = match &meta.kind {
            FeatureKind::Categorical { levels } => {
                let n = levels.len();
                (
                    Vec::new(),
                    levels.clone(),
                    Box::new(move |v: f64| Some(v as usize).filter(|&b| b < n)),
                )
            }
            FeatureKind::Continuous { range } => {
                if bins == 0 {
                    return Err(DataError::InvalidArgument("bins must be at least 1".into()));
                }
                let (min, max) = if exclude_sentinels {
                    (range[0], range[1])
                } else {
                    min_max(self.rows.iter().filter_map(|r| r[j])).unwrap_or((range[0], range[1]))
                };
                let width = (max - min) / bins as f64;
                let edges = (0..=bins)
                    .map(|b| if b == bins { max } else { min + width * b as f64 })
                    .collect();
                let sentinels = meta.sentinels.clone();
                (
                    edges,
                    Vec::new(),
                    Box::new(move |v: f64| {
                        if exclude_sentinels && sentinels.contains(&v) {
                            return None;
                        }
                        if width == 0.0 {
                            return Some(0);
                        }
                        let b = ((v - min) / width).floor();
                        Some((b.max(0.0) as usize).min(bins - 1))
                    }),
                )
            }
        };
        let n_bins = if meta.is_categorical() { levels.len() } else { bins };
        let mut counts = [vec![0usize; n_bins], vec![0usize; n_bins]];
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            if let Some(b) = row[j].and_then(&bin_of) {
                counts[label as usize][b] += 1;
            }
        }
        let density = counts.clone().map(|c| {
            let total: usize = c.iter().sum();
            c.iter()
                .map(|&n| if total == 0 { 0.0 } else { n as f64 / total as f64 })
                .collect()
        });
        Ok(ClassHistogram {
            feature: meta.name.clone(),
            bin_edges,
            levels,
            class_names: self.class_names.clone(),
            per_class_counts: counts,
            per_class_density: density,
            sentinels_excluded: exclude_sentinels,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Loads a CSV file. See [`load_csv_reader`].
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, hints: &HashMap<String, KindHint>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, label_column, hints)
}

/// Parses a comma-delimited UTF-8 CSV with a header row. A column is
/// categorical when hinted so or when any non-missing cell is not a finite
/// number. The label column must hold exactly two distinct values; class
/// indices follow their sorted order (numeric when both parse as numbers).
pub fn load_csv_reader<R: Read>(reader: R, label_column: &str, hints: &HashMap<String, KindHint>) -> Result<Dataset> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = csv
        .headers()
        .map_err(|e| DataError::MalformedCsv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::EmptyData("missing header row".into()));
    }
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::BadLabel(format!("label column `{label_column}` not found")))?;
    for name in hints.keys() {
        if !header.contains(name) {
            return Err(DataError::UnknownFeature(name.clone()));
        }
    }

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| DataError::MalformedCsv(format!("record {}: {e}", i + 1)))?;
        cells.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    if cells.is_empty() {
        return Err(DataError::EmptyData("no data rows".into()));
    }

    let raw_labels: Vec<&str> = cells.iter().map(|r| r[label_idx].as_str()).collect();
    if let Some(i) = raw_labels.iter().position(|l| is_missing(l)) {
        return Err(DataError::BadLabel(format!("row {} has a missing label", i + 1)));
    }
    let class_values = sorted_levels(raw_labels.iter().copied());
    if class_values.len() != 2 {
        return Err(DataError::BadLabel(format!(
            "label column must have exactly 2 distinct values, found {}",
            class_values.len()
        )));
    }
    let labels = raw_labels.iter().map(|l| u8::from(*l == class_values[1])).collect();

    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_idx).collect();
    let mut features = Vec::with_capacity(feature_cols.len());
    let mut columns: Vec<Vec<Value>> = Vec::with_capacity(feature_cols.len());
    for &c in &feature_cols {
        let name = &header[c];
        let raw: Vec<&str> = cells.iter().map(|r| r[c].as_str()).collect();
        let present: Vec<&str> = raw.iter().copied().filter(|v| !is_missing(v)).collect();
        let missing_count = raw.len() - present.len();
        let numeric = present.iter().all(|v| parse_finite(v).is_some());
        let categorical = match hints.get(name) {
            Some(KindHint::Categorical) => true,
            Some(KindHint::Continuous) if !numeric => {
                return Err(DataError::MalformedCsv(format!(
                    "column `{name}` is hinted continuous but holds non-numeric values"
                )))
            }
            Some(KindHint::Continuous) => false,
            None => !numeric,
        };
        if present.is_empty() {
            return Err(DataError::EmptyData(format!("column `{name}` has no values")));
        }
        let (meta, column) = if categorical {
            let levels = sorted_levels(present.iter().copied());
            let index: HashMap<&str, f64> = levels.iter().enumerate().map(|(i, l)| (l.as_str(), i as f64)).collect();
            let column = raw
                .iter()
                .map(|v| if is_missing(v) { None } else { Some(index[v]) })
                .collect();
            (FeatureMeta::categorical(name.clone(), levels.clone()), column)
        } else {
            let column: Vec<Value> = raw
                .iter()
                .map(|v| if is_missing(v) { None } else { parse_finite(v) })
                .collect();
            let (min, max) = min_max(column.iter().copied().flatten()).expect("column has values");
            (FeatureMeta::continuous(name.clone(), min, max), column)
        };
        features.push(FeatureMeta { missing_count, ..meta });
        columns.push(column);
    }

    let rows = (0..cells.len())
        .map(|i| columns.iter().map(|col| col[i]).collect())
        .collect();
    Dataset::new(
        features,
        rows,
        labels,
        [class_values[0].clone(), class_values[1].clone()],
    )
}

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Distinct values in ascending order; numeric order when every value parses.
fn sorted_levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let unique: BTreeSet<&str> = values.collect();
    let mut levels: Vec<&str> = unique.into_iter().collect();
    if levels.iter().all(|l| parse_finite(l).is_some()) {
        levels.sort_by(|a, b| parse_finite(a).unwrap().total_cmp(&parse_finite(b).unwrap()));
    }
    levels.into_iter().map(str::to_string).collect()
}

pub(crate) fn min_max(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}
