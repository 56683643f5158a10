use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use resincarve_core::gcode::GcodeError;
use resincarve_core::pipeline::{Stage, StageError};
use resincarve_core::segmentation::ExternalError;
use resincarve_core::Error;
use serde::Serialize;

/// JSON error body: `{code, message, line?, stage?}`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code, message: message.into(), line: None, stage: None } }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code, line) = match &e {
            Error::FileNotFound(_) => (StatusCode::NOT_FOUND, "not_found", None),
            Error::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io_error", None),
            Error::Decode(_) | Error::UnsupportedFormat(_) => (StatusCode::BAD_REQUEST, "decode_error", None),
            Error::Encode(_) => (StatusCode::INTERNAL_SERVER_ERROR, "encode_error", None),
            Error::DimensionMismatch { .. } => (StatusCode::BAD_REQUEST, "dimension_mismatch", None),
            Error::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config", None),
            Error::ManifestParse(_) | Error::ManifestEntry { .. } => {
                (StatusCode::BAD_REQUEST, "manifest_error", None)
            }
            Error::OutOfBounds { .. } => (StatusCode::BAD_REQUEST, "out_of_bounds", None),
            Error::NonBinaryPixel { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "non_binary_pixel", None),
            Error::EmptyInput(_) => (StatusCode::UNPROCESSABLE_ENTITY, "empty_input", None),
            Error::MissingPrediction(_) => (StatusCode::BAD_REQUEST, "missing_prediction", None),
            Error::Gcode(GcodeError::InvalidConfig(_)) => (StatusCode::BAD_REQUEST, "invalid_config", None),
            Error::Gcode(g) => (StatusCode::UNPROCESSABLE_ENTITY, "gcode_error", g.line()),
            Error::External(ExternalError::Timeout { .. }) => (StatusCode::GATEWAY_TIMEOUT, "backend_timeout", None),
            Error::External(_) => (StatusCode::BAD_GATEWAY, "backend_error", None),
        };
        Self { status, body: ErrorBody { code, message, line, stage: None } }
    }
}

impl From<StageError> for ApiError {
    fn from(e: StageError) -> Self {
        let mut api = ApiError::from(e.source);
        api.body.stage = Some(e.stage);
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
