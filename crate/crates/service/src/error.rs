use thiserror::Error;
use uuid::Uuid;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("no model loaded")]
    NoModelLoaded,
    #[error("no alarms in the window for turbine {0}")]
    NoAlarmsInWindow(u32),
    #[error("unknown recommendation {0}")]
    UnknownRecommendation(Uuid),
    #[error("recommendation {0} is already resolved")]
    AlreadyResolved(Uuid),
    #[error("a rejection rated below {threshold} needs a corrected_label")]
    MissingCorrection { threshold: u8 },
    #[error("a retrain job is already running")]
    RetrainInProgress,
    #[error("retrain needs {min} buffered examples (have {buffered}) or an accept rate below {target}")]
    InsufficientData { buffered: usize, min: usize, target: f64 },
    #[error("storage error: {0}")]
    Store(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable code used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Validation(_) => "validation_error",
            Self::NoModelLoaded => "no_model_loaded",
            Self::NoAlarmsInWindow(_) => "no_alarms_in_window",
            Self::UnknownRecommendation(_) => "unknown_recommendation",
            Self::AlreadyResolved(_) => "already_resolved",
            Self::MissingCorrection { .. } => "missing_correction",
            Self::RetrainInProgress => "retrain_in_progress",
            Self::InsufficientData { .. } => "insufficient_data",
            Self::Store(_) => "store_error",
            Self::Internal(_) => "internal_error",
        }
    }
}

impl From<rusqlite::Error> for ServiceError {
    fn from(e: rusqlite::Error) -> Self {
        Self::Store(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Store(e.to_string())
    }
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;
