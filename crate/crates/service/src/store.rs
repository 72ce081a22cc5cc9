//! On-disk registry of datasets and models.
//!
//! Layout under the data directory:
//!
//! ```text
//! datasets/{id}.json      dataset document
//! models/{id}.json        forest document (ready models only)
//! models/{id}.meta.json   model record without the forest
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rfexplain_core::data::Dataset;
use rfexplain_core::forest::{Forest, TrainParams};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Training,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub dataset_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub status: ModelStatus,
    pub params: TrainParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub meta: ModelMeta,
    pub forest: Option<Arc<Forest>>,
}

#[derive(Default)]
struct Inner {
    datasets: BTreeMap<String, Arc<Dataset>>,
    models: BTreeMap<String, ModelEntry>,
}

pub struct Store {
    dir: PathBuf,
    inner: RwLock<Inner>,
}

/// Ids double as file names, so they are restricted to a safe alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        && !id.starts_with('-')
}

fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn next_id<V>(map: &BTreeMap<String, V>, prefix: &str) -> String {
    (1..)
        .map(|n| format!("{prefix}-{n}"))
        .find(|id| !map.contains_key(id))
        .expect("id space is unbounded")
}

impl Store {
    /// Opens the data directory, creating it if needed, and loads every
    /// stored artifact. Models that were still training when the previous
    /// process stopped are marked failed.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Store> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("datasets"))?;
        fs::create_dir_all(dir.join("models"))?;
        let mut inner = Inner::default();

        for entry in fs::read_dir(dir.join("datasets"))? {
            let path = entry?.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".json"))
            else {
                continue;
            };
            let dataset = Dataset::load(&path).map_err(|e| io::Error::other(format!("{}: {e}", path.display())))?;
            inner.datasets.insert(id.to_string(), Arc::new(dataset));
        }

        for entry in fs::read_dir(dir.join("models"))? {
            let path = entry?.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".meta.json"))
            else {
                continue;
            };
            let text = fs::read_to_string(&path)?;
            let mut meta: ModelMeta =
                serde_json::from_str(&text).map_err(|e| io::Error::other(format!("{}: {e}", path.display())))?;
            let forest = match meta.status {
                ModelStatus::Ready => {
                    let forest_path = dir.join("models").join(format!("{id}.json"));
                    let forest = Forest::load(&forest_path)
                        .map_err(|e| io::Error::other(format!("{}: {e}", forest_path.display())))?;
                    Some(Arc::new(forest))
                }
                ModelStatus::Training => {
                    meta.status = ModelStatus::Failed;
                    meta.error = Some("training was interrupted by a restart".into());
                    write_atomic(&path, &serde_json::to_string(&meta)?)?;
                    None
                }
                ModelStatus::Failed => None,
            };
            inner.models.insert(id.to_string(), ModelEntry { meta, forest });
        }

        Ok(Store {
            dir,
            inner: RwLock::new(inner),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn dataset_path(&self, id: &str) -> PathBuf {
        self.dir.join("datasets").join(format!("{id}.json"))
    }

    pub fn forest_path(&self, id: &str) -> PathBuf {
        self.dir.join("models").join(format!("{id}.json"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.dir.join("models").join(format!("{id}.meta.json"))
    }

    /// Persists a dataset under a fresh id.
    pub fn add_dataset(&self, dataset: Dataset) -> Result<(String, Arc<Dataset>), ApiError> {
        let mut inner = self.inner.write().expect("store lock poisoned");
        let id = next_id(&inner.datasets, "ds");
        write_atomic(&self.dataset_path(&id), &dataset.to_json())?;
        let dataset = Arc::new(dataset);
        inner.datasets.insert(id.clone(), dataset.clone());
        Ok((id, dataset))
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner
            .datasets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown dataset `{id}`")))
    }

    pub fn datasets(&self) -> Vec<(String, Arc<Dataset>)> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.datasets.iter().map(|(id, ds)| (id.clone(), ds.clone())).collect()
    }

    /// Registers a model in the training state. `requested` ids must be
    /// unused; otherwise a fresh id is allocated.
    pub fn begin_model(
        &self,
        requested: Option<String>,
        dataset_id: &str,
        params: TrainParams,
    ) -> Result<ModelMeta, ApiError> {
        let mut inner = self.inner.write().expect("store lock poisoned");
        let id = match requested {
            Some(id) if !valid_id(&id) => {
                return Err(ApiError::bad_request(
                    "InvalidId",
                    format!("model id `{id}` must be 1-64 characters from [A-Za-z0-9_-]"),
                ))
            }
            Some(id) if inner.models.contains_key(&id) => {
                return Err(ApiError::Conflict {
                    code: "DuplicateId",
                    message: format!("model `{id}` already exists"),
                })
            }
            Some(id) => id,
            None => next_id(&inner.models, "m"),
        };
        let meta = ModelMeta {
            model_id: id.clone(),
            dataset_id: dataset_id.to_string(),
            created_at: now(),
            status: ModelStatus::Training,
            params,
            error: None,
        };
        write_atomic(
            &self.meta_path(&id),
            &serde_json::to_string(&meta).map_err(io::Error::other)?,
        )?;
        inner.models.insert(
            id,
            ModelEntry {
                meta: meta.clone(),
                forest: None,
            },
        );
        Ok(meta)
    }

    /// Records the outcome of a training job.
    pub fn finish_model(&self, id: &str, outcome: Result<Forest, String>) -> io::Result<()> {
        let mut inner = self.inner.write().expect("store lock poisoned");
        let Some(entry) = inner.models.get_mut(id) else {
            return Ok(());
        };
        match outcome {
            Ok(forest) => {
                write_atomic(&self.forest_path(id), &forest.to_json())?;
                entry.meta.status = ModelStatus::Ready;
                entry.meta.params = forest.params.clone();
                entry.forest = Some(Arc::new(forest));
            }
            Err(message) => {
                entry.meta.status = ModelStatus::Failed;
                entry.meta.error = Some(message);
            }
        }
        write_atomic(&self.meta_path(id), &serde_json::to_string(&entry.meta)?)
    }

    pub fn model(&self, id: &str) -> Result<ModelEntry, ApiError> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner
            .models
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown model `{id}`")))
    }

    pub fn models(&self) -> Vec<ModelEntry> {
        let inner = self.inner.read().expect("store lock poisoned");
        inner.models.values().cloned().collect()
    }

    /// The forest of a ready model.
    pub fn ready_forest(&self, id: &str) -> Result<Arc<Forest>, ApiError> {
        let entry = self.model(id)?;
        entry.forest.ok_or_else(|| ApiError::Conflict {
            code: "ModelNotReady",
            message: format!(
                "model `{id}` is {}",
                match entry.meta.status {
                    ModelStatus::Training => "still training",
                    ModelStatus::Failed => "failed",
                    ModelStatus::Ready => "ready",
                }
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_alphabet() {
        assert!(valid_id("m-1") && valid_id("pima_v2"));
        assert!(!valid_id("") && !valid_id("../x") && !valid_id("a/b") && !valid_id("-x"));
        assert!(!valid_id(&"a".repeat(65)));
    }

    #[test]
    fn interrupted_training_is_failed_on_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let meta = store.begin_model(None, "ds-1", TrainParams::default()).unwrap();
        assert_eq!(meta.model_id, "m-1");
        assert_eq!(
            store
                .begin_model(None, "ds-1", TrainParams::default())
                .unwrap()
                .model_id,
            "m-2"
        );
        assert!(matches!(
            store.begin_model(Some("m-1".into()), "ds-1", TrainParams::default()),
            Err(ApiError::Conflict { .. })
        ));
        drop(store);
        let store = Store::open(dir.path()).unwrap();
        let entry = store.model("m-1").unwrap();
        assert_eq!(entry.meta.status, ModelStatus::Failed);
        assert!(entry.meta.error.is_some());
        assert!(matches!(store.ready_forest("m-1"), Err(ApiError::Conflict { .. })));
    }
}
