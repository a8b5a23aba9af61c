use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use crate::active::ActiveError;
use crate::dataset::DatasetError;
use crate::domain::DomainError;
use crate::evaluation::EvalError;
use crate::gateway::GatewayError;
use crate::lock::LockError;
use crate::platform::PlatformError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(kind = self.kind, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            error: self.kind,
            message: &self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

const NOT_FOUND: StatusCode = StatusCode::NOT_FOUND;
const CONFLICT: StatusCode = StatusCode::CONFLICT;
const UNPROCESSABLE: StatusCode = StatusCode::UNPROCESSABLE_ENTITY;
const INTERNAL: StatusCode = StatusCode::INTERNAL_SERVER_ERROR;

fn domain(e: &DomainError) -> (StatusCode, &'static str) {
    match e {
        DomainError::UnknownImage(_) => (NOT_FOUND, "UnknownImage"),
        DomainError::UnknownLabel(_) => (NOT_FOUND, "UnknownLabel"),
        DomainError::UnknownAnnotation(_) => (NOT_FOUND, "UnknownAnnotation"),
        DomainError::UnknownNode(_) => (NOT_FOUND, "UnknownNode"),
        DomainError::UnknownFolder(_) => (NOT_FOUND, "UnknownFolder"),
        DomainError::DegeneratePolygon(_) => (UNPROCESSABLE, "DegeneratePolygon"),
        DomainError::OutOfBounds => (UNPROCESSABLE, "OutOfBounds"),
        DomainError::IllegalTransition { .. } => (CONFLICT, "IllegalTransition"),
        DomainError::BelowAutoAcceptThreshold { .. } => (UNPROCESSABLE, "BelowAutoAcceptThreshold"),
        DomainError::Validation(_) => (UNPROCESSABLE, "ValidationError"),
        DomainError::Corrupt { .. } => (INTERNAL, "DataRootCorrupt"),
        DomainError::Io { .. } => (INTERNAL, "IoError"),
    }
}

fn dataset(e: &DatasetError) -> (StatusCode, &'static str) {
    match e {
        DatasetError::EmptySelection => (UNPROCESSABLE, "EmptySelection"),
        DatasetError::InsufficientData(_) => (UNPROCESSABLE, "InsufficientData"),
        DatasetError::InvalidRatio(_) => (UNPROCESSABLE, "InvalidRatio"),
        DatasetError::NoAcceptedAnnotations(_) => (UNPROCESSABLE, "NoAcceptedAnnotations"),
        DatasetError::InvalidSpec(_) => (UNPROCESSABLE, "InvalidSpec"),
        DatasetError::UnsupportedFormat(_) => (UNPROCESSABLE, "UnsupportedFormat"),
        DatasetError::InconsistentSplit(_) => (UNPROCESSABLE, "InconsistentSplit"),
        DatasetError::SchemaViolation { .. } => (UNPROCESSABLE, "SchemaViolation"),
        DatasetError::Io { .. } => (INTERNAL, "IoError"),
        DatasetError::Domain(d) => domain(d),
    }
}

fn classify(e: &PlatformError) -> (StatusCode, &'static str) {
    match e {
        PlatformError::Config(_) => (INTERNAL, "ConfigError"),
        PlatformError::Domain(d) => domain(d),
        PlatformError::Lock(l) => match l {
            LockError::NoneAvailable => (StatusCode::NO_CONTENT, "NoneAvailable"),
            LockError::UnknownToken => (NOT_FOUND, "UnknownToken"),
            LockError::LeaseExpired => (CONFLICT, "LockExpired"),
            LockError::Journal { .. } => (INTERNAL, "JournalError"),
        },
        PlatformError::Active(a) => match a {
            ActiveError::OutOfRange(_) => (UNPROCESSABLE, "OutOfRange"),
            ActiveError::Domain(d) => domain(d),
            ActiveError::InvalidThresholds(_) | ActiveError::Journal { .. } => (INTERNAL, "InternalError"),
        },
        PlatformError::Dataset(d) => dataset(d),
        PlatformError::Gateway(g) => match g {
            GatewayError::DuplicateModel(_) => (CONFLICT, "DuplicateModel"),
            GatewayError::MissingConfigKey(_) => (UNPROCESSABLE, "MissingConfigKey"),
            GatewayError::UnknownModel(_) => (NOT_FOUND, "UnknownModel"),
            GatewayError::UnknownJob(_) => (NOT_FOUND, "UnknownJob"),
            GatewayError::IllegalState { .. } => (CONFLICT, "IllegalState"),
            GatewayError::UnknownClass(_) => (UNPROCESSABLE, "UnknownClass"),
            GatewayError::Validation(_) => (UNPROCESSABLE, "ValidationError"),
            GatewayError::Dataset(d) => dataset(d),
            GatewayError::Journal { .. } => (INTERNAL, "JournalError"),
        },
        PlatformError::Eval(ev) => match ev {
            EvalError::NoPredictions { .. } => (NOT_FOUND, "NoPredictions"),
            EvalError::NoData => (NOT_FOUND, "NoData"),
            EvalError::InvalidMeanIou(_) => (UNPROCESSABLE, "ValidationError"),
            EvalError::MixedImages | EvalError::Geometry(_) => (UNPROCESSABLE, "ValidationError"),
            EvalError::Domain(d) => domain(d),
        },
        PlatformError::LockExpired(_) => (CONFLICT, "LockExpired"),
        PlatformError::LeaseNotHeld => (StatusCode::FORBIDDEN, "LeaseNotHeld"),
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let (status, kind) = classify(&e);
        ApiError::new(status, kind, e.to_string())
    }
}
