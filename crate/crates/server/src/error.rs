use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use trackmark_core::ErrorCode;

/// Error body shared by every route and by CLI diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), details: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn status(&self) -> StatusCode {
        use ErrorCode::*;
        match self.code {
            NotFound => StatusCode::NOT_FOUND,
            OpenError | EmptyVideo | BadRequest | ConfigError | PromptError | RangeError | ShapeError
            | EmptyObject => StatusCode::BAD_REQUEST,
            CapabilityError | SeedError | ExportError => StatusCode::UNPROCESSABLE_ENTITY,
            StateError | Cancelled | Busy => StatusCode::CONFLICT,
            LoadError => StatusCode::SERVICE_UNAVAILABLE,
            WriteError | Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(
            impl From<$t> for ApiError {
                fn from(e: $t) -> Self {
                    ApiError::new(e.code(), e.to_string())
                }
            }
        )*
    };
}

from_core!(
    trackmark_core::Error,
    trackmark_core::session::SessionError,
    trackmark_core::export::ExportError,
    trackmark_core::bench::BenchError,
    trackmark_core::video::VideoError,
    trackmark_core::mask::MaskError,
    trackmark_core::segmentation::SegmentationError,
    trackmark_core::tracking::TrackingError
);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
