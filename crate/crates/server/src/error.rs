use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use cokg_core::session::EngineError;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_revision: Option<u64>,
}

/// An error response: status plus a JSON body `{error, stage?, current_revision?}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                stage: None,
                current_revision: None,
            },
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    pub fn unprocessable(what: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, what)
    }

    pub fn internal(what: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, what)
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::UnknownNode(_) | EngineError::UnknownGroup(_) => Self::not_found(message),
            EngineError::StaleRevision { actual, .. } => {
                let mut err = Self::new(StatusCode::CONFLICT, message);
                err.body.current_revision = Some(actual);
                err
            }
            EngineError::InvalidOp { .. } | EngineError::Invalid(_) => Self::unprocessable(message),
            EngineError::Provider { stage, .. } => {
                let mut err = Self::new(StatusCode::BAD_GATEWAY, message);
                err.body.stage = Some(stage.to_string());
                err
            }
            EngineError::Storage(_) => Self::internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
