use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use ttl_core::evaluation::EvalError;
use ttl_core::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    ProviderUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::ProviderUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body: `{"code": "...", "message": "...", "detail": ...}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::NotFound, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::Conflict, message)
    }

    pub fn internal() -> Self {
        ApiError::new(ErrorCode::Internal, "internal error")
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

/// Maps workspace failures to API errors. Messages that could carry file
/// paths are logged and replaced by a generic one.
impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        if e.is_provider_failure() {
            return ApiError::new(
                ErrorCode::ProviderUnavailable,
                "embedding provider unavailable",
            );
        }
        match e {
            StoreError::UnknownCandidate(s, t) => {
                ApiError::not_found(format!("no candidate link between `{s}` and `{t}`"))
            }
            StoreError::NoGroundTruth => ApiError::conflict("project has no ground truth"),
            StoreError::NoRun => ApiError::conflict("project has not been run yet"),
            StoreError::MissingTaxonomy => ApiError::conflict("project has no taxonomy"),
            StoreError::MissingCorpus(role) => {
                ApiError::conflict(format!("project has no {role} corpus"))
            }
            StoreError::IdCollision(id) => {
                ApiError::conflict(format!("artifact id `{id}` appears in both corpora"))
            }
            StoreError::Link(e) | StoreError::Eval(EvalError::Link(e)) => {
                ApiError::bad_request(e.to_string())
            }
            StoreError::Eval(EvalError::EmptyGroundTruth) => {
                ApiError::conflict("ground truth is empty")
            }
            StoreError::Classify(ttl_core::classifier::ClassifyError::InvalidConfig(m)) => {
                ApiError::bad_request(m)
            }
            StoreError::Embedding(ttl_core::embedding::EmbeddingError::InvalidConfig(m)) => {
                ApiError::bad_request(m)
            }
            other => {
                log::error!("{other}");
                ApiError::internal()
            }
        }
    }
}
