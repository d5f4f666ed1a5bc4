use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use flipset::{Error, ErrorCategory};
use serde::Serialize;
use serde_json::{json, Value};

/// Error response with body `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
    detail: &'a Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: &str, id: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id} not found"))
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn busy(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "busy", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match &e {
            Error::Parse { path, line, message: m } => {
                ApiError::unprocessable("invalid_data", message.clone()).with_detail(json!({
                    "path": path.display().to_string(),
                    "line": line,
                    "reason": m,
                }))
            }
            Error::DegenerateRemainder(_) => ApiError::unprocessable("degenerate_remainder", message),
            _ => match e.category() {
                ErrorCategory::Config => ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", message),
                ErrorCategory::Data => ApiError::unprocessable("invalid_data", message),
                ErrorCategory::Numerical => {
                    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "numerical_failure", message)
                }
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = Body {
            code: self.code,
            message: &self.message,
            detail: &self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
