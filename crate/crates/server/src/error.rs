//! API error codes and their HTTP mapping.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use npds_core::aggregate::AggregateError;
use npds_core::questions::QuestionError;
use npds_core::recording::RecordingError;
use serde::{Deserialize, Serialize};

/// Error codes as they appear in `{"error": code}` bodies and audit entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    Unauthorized,
    ScopeDenied,
    NotAuthorized,
    UnknownScope,
    UnknownQuestion,
    UnknownRecording,
    UnknownGrant,
    UnknownSession,
    AlreadyDecided,
    BadRecording,
    DependencyCycle,
    UnknownSchema,
    UnknownDependency,
    InvalidParams,
    InvalidRequest,
    NoSuchAnswer,
    SessionMismatch,
    MinimumGroupSize,
    RangeExceeded,
    MissingPeerSecret,
    NotFound,
    MethodNotAllowed,
    PayloadTooLarge,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            Unauthorized => StatusCode::UNAUTHORIZED,
            ScopeDenied | NotAuthorized => StatusCode::FORBIDDEN,
            UnknownQuestion | UnknownRecording | UnknownGrant | UnknownSession | NoSuchAnswer | NotFound => {
                StatusCode::NOT_FOUND
            }
            AlreadyDecided | SessionMismatch | DependencyCycle => StatusCode::CONFLICT,
            MethodNotAllowed => StatusCode::METHOD_NOT_ALLOWED,
            PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            Internal => StatusCode::INTERNAL_SERVER_ERROR,
            UnknownScope | BadRecording | UnknownSchema | UnknownDependency | InvalidParams | InvalidRequest
            | MinimumGroupSize | RangeExceeded | MissingPeerSecret => StatusCode::BAD_REQUEST,
        }
    }

    /// Best-effort code for responses produced outside our handlers.
    pub fn from_status(status: StatusCode) -> Option<Self> {
        match status {
            s if s.is_success() || s.is_redirection() => None,
            StatusCode::UNAUTHORIZED => Some(ErrorCode::Unauthorized),
            StatusCode::FORBIDDEN => Some(ErrorCode::ScopeDenied),
            StatusCode::NOT_FOUND => Some(ErrorCode::NotFound),
            StatusCode::METHOD_NOT_ALLOWED => Some(ErrorCode::MethodNotAllowed),
            StatusCode::PAYLOAD_TOO_LARGE => Some(ErrorCode::PayloadTooLarge),
            s if s.is_client_error() => Some(ErrorCode::InvalidRequest),
            _ => Some(ErrorCode::Internal),
        }
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            Unauthorized => "Unauthorized",
            ScopeDenied => "ScopeDenied",
            NotAuthorized => "NotAuthorized",
            UnknownScope => "UnknownScope",
            UnknownQuestion => "UnknownQuestion",
            UnknownRecording => "UnknownRecording",
            UnknownGrant => "UnknownGrant",
            UnknownSession => "UnknownSession",
            AlreadyDecided => "AlreadyDecided",
            BadRecording => "BadRecording",
            DependencyCycle => "DependencyCycle",
            UnknownSchema => "UnknownSchema",
            UnknownDependency => "UnknownDependency",
            InvalidParams => "InvalidParams",
            InvalidRequest => "InvalidRequest",
            NoSuchAnswer => "NoSuchAnswer",
            SessionMismatch => "SessionMismatch",
            MinimumGroupSize => "MinimumGroupSize",
            RangeExceeded => "RangeExceeded",
            MissingPeerSecret => "MissingPeerSecret",
            NotFound => "NotFound",
            MethodNotAllowed => "MethodNotAllowed",
            PayloadTooLarge => "PayloadTooLarge",
            Internal => "Internal",
        }
    }
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into() }
    }

    pub fn unauthorized() -> Self {
        Self::new(ErrorCode::Unauthorized, "missing, invalid, expired or revoked credential")
    }

    pub fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(ErrorCode::Internal, e.to_string())
    }
}

/// Wire form of an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorCode,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut response =
            (self.code.status(), Json(ErrorBody { error: self.code, message: self.message })).into_response();
        response.extensions_mut().insert(self.code);
        response
    }
}

impl From<QuestionError> for ApiError {
    fn from(e: QuestionError) -> Self {
        let code = match &e {
            QuestionError::DependencyCycle(_) => ErrorCode::DependencyCycle,
            QuestionError::UnknownSchema(_) => ErrorCode::UnknownSchema,
            QuestionError::UnknownDependency(_) => ErrorCode::UnknownDependency,
            QuestionError::InvalidParams(_) | QuestionError::InvalidPayload(_) => ErrorCode::InvalidParams,
            QuestionError::UnknownQuestion(_) => ErrorCode::UnknownQuestion,
            QuestionError::NoLocatedAnswers => ErrorCode::NoSuchAnswer,
            QuestionError::Storage(_) => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<RecordingError> for ApiError {
    fn from(e: RecordingError) -> Self {
        ApiError::new(ErrorCode::BadRecording, e.to_string())
    }
}

impl From<AggregateError> for ApiError {
    fn from(e: AggregateError) -> Self {
        let code = match &e {
            AggregateError::RangeExceeded { .. } => ErrorCode::RangeExceeded,
            AggregateError::MinimumGroupSize { .. } => ErrorCode::MinimumGroupSize,
            AggregateError::SessionMismatch | AggregateError::UnknownParticipant(_) => ErrorCode::SessionMismatch,
            AggregateError::MissingShare(_) | AggregateError::DuplicateShare(_) | AggregateError::InvalidSession(_) => {
                ErrorCode::InvalidRequest
            }
        };
        ApiError::new(code, e.to_string())
    }
}
