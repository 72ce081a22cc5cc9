//! HTTP JSON service over datasets, trained forests and explanations.
//!
//! | method | path | result |
//! |---|---|---|
//! | POST | `/datasets` | multipart `file` + `label_column`, optional comma separated `categorical` and `sentinels`; 201 with a summary |
//! | GET | `/datasets`, `/datasets/{id}` | dataset summaries |
//! | GET | `/datasets/{id}/histogram?feature=&bins=&exclude_sentinels=` | class histogram |
//! | POST | `/models` | `{dataset_id, params?, model_id?}`; 202, trains in the background |
//! | GET | `/models`, `/models/{id}` | model records with OOB error and MDI importances |
//! | GET | `/models/{id}/forest` | forest document |
//! | POST | `/models/{id}/explain` | combined explanation document |
//!
//! Errors are `{error, message}` bodies.

pub mod error;
pub mod store;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rfexplain_core::data::{
    load_csv_reader, ClassHistogram, Dataset, FeatureMeta, KindHint, DEFAULT_SENTINEL_FRACTION,
};
use rfexplain_core::forest::{Forest, TrainParams};
use rfexplain_core::report::{self, ExplainRequest};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

pub use error::{ApiError, ErrorBody};
pub use store::{ModelMeta, ModelStatus, Store};

/// Largest accepted request body.
pub const DEFAULT_BODY_LIMIT: usize = 64 * 1024 * 1024;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub n_rows: usize,
    pub class_names: [String; 2],
    pub class_counts: [usize; 2],
    pub features: Vec<FeatureMeta>,
}

impl DatasetSummary {
    fn new(id: &str, ds: &Dataset) -> Self {
        DatasetSummary {
            dataset_id: id.to_string(),
            n_rows: ds.n_rows(),
            class_names: ds.class_names.clone(),
            class_counts: ds.class_counts(),
            features: ds.features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub importance: f64,
}

/// Model record as reported by `GET /models/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    #[serde(flatten)]
    pub meta: ModelMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oob_error: Option<f64>,
    /// Global MDI importances in feature order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importances: Option<Vec<FeatureImportance>>,
}

impl ModelSummary {
    fn new(entry: &store::ModelEntry) -> Self {
        let forest = entry.forest.as_deref();
        ModelSummary {
            meta: entry.meta.clone(),
            n_trees: forest.map(Forest::n_trees),
            oob_error: forest.and_then(Forest::oob_error),
            importances: forest.map(|f| {
                f.feature_names()
                    .into_iter()
                    .zip(f.global_importance_mdi())
                    .map(|(feature, importance)| FeatureImportance { feature, importance })
                    .collect()
            }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    dataset_id: String,
    #[serde(default)]
    params: TrainParams,
    #[serde(default)]
    model_id: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct HistogramQuery {
    feature: String,
    bins: Option<usize>,
    exclude_sentinels: Option<bool>,
}

pub fn router(store: Arc<Store>) -> Router {
    router_with_limit(store, DEFAULT_BODY_LIMIT)
}

pub fn router_with_limit(store: Arc<Store>, body_limit: usize) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/histogram", get(histogram))
        .route("/models", post(create_model).get(list_models))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/forest", get(get_forest))
        .route("/models/{id}/explain", post(explain))
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(store)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn json_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn upload_dataset(
    State(store): State<Arc<Store>>,
    multipart: Result<Multipart, axum::extract::multipart::MultipartRejection>,
) -> ApiResult<(StatusCode, Json<DatasetSummary>)> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request("BadMultipart", e.body_text()))?;
    let mut file: Option<Bytes> = None;
    let mut label: Option<String> = None;
    let mut hints: HashMap<String, KindHint> = HashMap::new();
    let mut sentinels: Vec<f64> = Vec::new();
    while let Some(field) = multipart.next_field().await? {
        match field.name() {
            Some("file") => file = Some(field.bytes().await?),
            Some("label_column") => label = Some(field.text().await?),
            Some("categorical") => {
                for name in field.text().await?.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                    hints.insert(name.to_string(), KindHint::Categorical);
                }
            }
            Some("sentinels") => {
                for value in field.text().await?.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    let parsed = value.parse::<f64>().map_err(|_| {
                        ApiError::bad_request("InvalidArgument", format!("bad sentinel value `{value}`"))
                    })?;
                    sentinels.push(parsed);
                }
            }
            _ => {}
        }
    }
    let file = file.ok_or_else(|| ApiError::bad_request("MalformedCsv", "missing `file` field"))?;
    let label = label.ok_or_else(|| ApiError::bad_request("BadLabel", "missing `label_column` field"))?;
    let summary = blocking(move || {
        let mut dataset = load_csv_reader(&file[..], label.trim(), &hints)?;
        if !sentinels.is_empty() {
            dataset = dataset.flag_sentinels(&sentinels, DEFAULT_SENTINEL_FRACTION)?;
        }
        let (id, dataset) = store.add_dataset(dataset)?;
        Ok(DatasetSummary::new(&id, &dataset))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_datasets(State(store): State<Arc<Store>>) -> Json<Vec<DatasetSummary>> {
    Json(
        store
            .datasets()
            .iter()
            .map(|(id, ds)| DatasetSummary::new(id, ds))
            .collect(),
    )
}

async fn get_dataset(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<DatasetSummary>> {
    let dataset = store.dataset(&id)?;
    Ok(Json(DatasetSummary::new(&id, &dataset)))
}

async fn histogram(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    query: Result<Query<HistogramQuery>, QueryRejection>,
) -> ApiResult<Json<ClassHistogram>> {
    let dataset = store.dataset(&id)?;
    let Query(q) = query.map_err(|e| ApiError::bad_request("BadQuery", e.body_text()))?;
    let histogram = dataset.class_histogram(
        &q.feature,
        q.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS),
        q.exclude_sentinels.unwrap_or(false),
    )?;
    Ok(Json(histogram))
}

async fn create_model(
    State(store): State<Arc<Store>>,
    body: Result<Json<TrainRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ModelSummary>)> {
    let Json(request) = body.map_err(|e| ApiError::bad_request("BadRequest", e.body_text()))?;
    let dataset = store.dataset(&request.dataset_id)?;
    let params = request.params.resolve(&dataset)?;
    let meta = store.begin_model(request.model_id, &request.dataset_id, params.clone())?;
    let id = meta.model_id.clone();
    let job_store = store.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = Forest::train(&dataset, &params).map_err(|e| e.to_string());
        if let Err(e) = job_store.finish_model(&id, outcome) {
            let _ = job_store.finish_model(&id, Err(format!("could not store the model: {e}")));
        }
    });
    let entry = store::ModelEntry { meta, forest: None };
    Ok((StatusCode::ACCEPTED, Json(ModelSummary::new(&entry))))
}

async fn list_models(State(store): State<Arc<Store>>) -> Json<Vec<ModelSummary>> {
    Json(store.models().iter().map(ModelSummary::new).collect())
}

async fn get_model(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Json<ModelSummary>> {
    Ok(Json(ModelSummary::new(&store.model(&id)?)))
}

async fn get_forest(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    let forest = store.ready_forest(&id)?;
    Ok(json_response(blocking(move || Ok(forest.to_json())).await?))
}

async fn explain(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let forest = store.ready_forest(&id)?;
    let body = body.map_err(|e| match e.status() {
        StatusCode::PAYLOAD_TOO_LARGE => ApiError::PayloadTooLarge(e.body_text()),
        _ => ApiError::bad_request("BadRequest", e.body_text()),
    })?;
    let request: ExplainRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("BadRequest", e))?;
    let report = blocking(move || Ok(report::explain(&forest, &request)?)).await?;
    Ok(json_response(report.to_json()))
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot open data directory: {0}")]
    Store(std::io::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error: {0}")]
    Server(std::io::Error),
}

/// Serves `data_dir` on `addr` until `shutdown` completes.
pub async fn serve(
    data_dir: impl Into<PathBuf>,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<(), ServeError> {
    let store = Arc::new(Store::open(data_dir).map_err(ServeError::Store)?);
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    on_ready(listener.local_addr().map_err(ServeError::Server)?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServeError::Server)
}
