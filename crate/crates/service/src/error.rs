use axum::extract::multipart::MultipartError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rfexplain_core::data::DataError;
use rfexplain_core::forest::ForestError;
use rfexplain_core::report::ReportError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error body of every failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{message}")]
    BadRequest { code: &'static str, message: String },
    #[error("{message}")]
    Conflict { code: &'static str, message: String },
    #[error("{0}")]
    PayloadTooLarge(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn bad_request(code: &'static str, message: impl ToString) -> Self {
        ApiError::BadRequest {
            code,
            message: message.to_string(),
        }
    }

    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            ApiError::BadRequest { code, .. } => (StatusCode::BAD_REQUEST, code),
            ApiError::Conflict { code, .. } => (StatusCode::CONFLICT, code),
            ApiError::PayloadTooLarge(_) => (StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge"),
            ApiError::Unprocessable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidConfig"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        let body = ErrorBody {
            error: code.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

impl From<DataError> for ApiError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::MalformedCsv(_) => "MalformedCsv",
            DataError::BadLabel(_) => "BadLabel",
            DataError::EmptyData(_) => "EmptyData",
            DataError::UnknownFeature(_) => "UnknownFeature",
            DataError::CategoricalFeature(_) | DataError::InvalidArgument(_) => "InvalidArgument",
            DataError::Invalid(_) => "InvalidDataset",
            DataError::Io(_) | DataError::Json(_) => return ApiError::Internal(e.to_string()),
        };
        ApiError::bad_request(code, e)
    }
}

impl From<ForestError> for ApiError {
    fn from(e: ForestError) -> Self {
        match &e {
            ForestError::InvalidParams(_) => ApiError::bad_request("InvalidParams", e),
            ForestError::SingleClass => ApiError::bad_request("SingleClass", e),
            ForestError::ArityMismatch { .. } => ApiError::bad_request("ArityMismatch", e),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        if e.is_config() {
            ApiError::Unprocessable(e.to_string())
        } else {
            ApiError::bad_request(e.code(), e)
        }
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::PayloadTooLarge(e.body_text())
        } else {
            ApiError::bad_request("BadMultipart", e.body_text())
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}
