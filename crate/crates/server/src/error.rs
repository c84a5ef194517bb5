use auditnet_core::corpus::CorpusError;
use auditnet_core::engine::EngineError;
use auditnet_core::extractor::ExtractError;
use auditnet_core::interpreter::{ConfirmError, InterpretError};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use crate::session::WrongState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    SessionNotFound,
    WrongState,
    AllSlotsEmpty,
    ProviderUnreachable,
    Validation,
    /// The corpus or index needed for the request does not exist yet.
    NotReady,
    NotFound,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::SessionNotFound | ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::WrongState | ErrorCode::NotReady => StatusCode::CONFLICT,
            ErrorCode::AllSlotsEmpty => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ProviderUnreachable => StatusCode::BAD_GATEWAY,
            ErrorCode::Validation => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub error_code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(error_code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            error_code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(ErrorCode::SessionNotFound, format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.error_code.status(), Json(self)).into_response()
    }
}

impl From<WrongState> for ApiError {
    fn from(e: WrongState) -> Self {
        Self::new(ErrorCode::WrongState, e.to_string())
    }
}

impl From<ConfirmError> for ApiError {
    fn from(e: ConfirmError) -> Self {
        match e {
            ConfirmError::AllSlotsEmpty => Self::new(ErrorCode::AllSlotsEmpty, e.to_string()),
            ConfirmError::AlreadyConfirmed => Self::new(ErrorCode::WrongState, e.to_string()),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = if e.is_provider_failure() {
            ErrorCode::ProviderUnreachable
        } else {
            match &e {
                EngineError::EmptyCorpus | EngineError::NoIndex => ErrorCode::NotReady,
                EngineError::Interpret(InterpretError::EmptyQuery)
                | EngineError::Corpus(CorpusError::EmptyContent | CorpusError::EmptyStandard) => ErrorCode::Validation,
                EngineError::Extract(ExtractError::NoSlots) => ErrorCode::AllSlotsEmpty,
                _ => ErrorCode::Internal,
            }
        };
        if code == ErrorCode::Internal {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(code, e.to_string())
    }
}
