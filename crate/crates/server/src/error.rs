use adapt_core::grading::GradingError;
use adapt_core::session::EngineError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn storage(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            EngineError::UnknownLearner(_) => (S::NOT_FOUND, "unknown_learner"),
            EngineError::UnknownLanguage(_) => (S::UNPROCESSABLE_ENTITY, "unknown_language"),
            EngineError::UnknownConcept(_) => (S::NOT_FOUND, "unknown_concept"),
            EngineError::UnknownQuestion(_) => (S::NOT_FOUND, "unknown_question"),
            EngineError::ConceptNotSelected(_) => (S::CONFLICT, "concept_not_selected"),
            EngineError::PretestPending(_) => (S::CONFLICT, "pretest_pending"),
            EngineError::NoPretestPending(_) => (S::CONFLICT, "no_pretest_pending"),
            EngineError::NotAssigned(_) => (S::CONFLICT, "not_assigned"),
            EngineError::PoolExhausted(_) => (S::CONFLICT, "pool_exhausted"),
            EngineError::ConceptNotComplete(_) => (S::CONFLICT, "concept_not_complete"),
            EngineError::DuplicateRequest(_) => (S::CONFLICT, "duplicate_request"),
            EngineError::Grading(GradingError::MissingTranscript { .. }) => {
                (S::UNPROCESSABLE_ENTITY, "transcript_required")
            }
            EngineError::Grading(_) => (S::UNPROCESSABLE_ENTITY, "grading_failed"),
            EngineError::Ontology(_) => (S::INTERNAL_SERVER_ERROR, "ontology_error"),
            EngineError::StateMismatch(_) => (S::INTERNAL_SERVER_ERROR, "state_mismatch"),
            EngineError::CorruptLog(_) => (S::INTERNAL_SERVER_ERROR, "corrupt_log"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = self.code, message = %self.message, "request failed");
        }
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
