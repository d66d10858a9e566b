use alarm2action::ingest::AlarmEvent;
use alarm2action::sequencer::PairedDocument;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationStatus {
    Pending,
    Accepted,
    Rejected,
    Corrected,
}

impl RecommendationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
            Self::Corrected => "corrected",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(Self::Pending),
            "accepted" => Some(Self::Accepted),
            "rejected" => Some(Self::Rejected),
            "corrected" => Some(Self::Corrected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextAlarm {
    pub alarm: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub id: Uuid,
    pub turbine_id: u32,
    pub created_at: DateTime<Utc>,
    pub alarm_window: Vec<AlarmEvent>,
    /// Most probable first.
    pub ranked: Vec<RankedLabel>,
    pub markov_next: Option<Vec<NextAlarm>>,
    pub status: RecommendationStatus,
    pub model_version: u64,
    #[serde(default)]
    pub resolved_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub recommendation_id: Uuid,
    pub rating: u8,
    pub verdict: Verdict,
    #[serde(default)]
    pub corrected_label: Option<String>,
    pub actor: String,
    #[serde(default = "Utc::now")]
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainPolicy {
    /// Rejections rated below this must carry a corrected label.
    pub rating_threshold: u8,
    pub min_new_examples: usize,
    pub acceptance_target: f64,
    /// Number of most recently resolved recommendations in the accept rate.
    pub accept_rate_window: usize,
}

impl Default for RetrainPolicy {
    fn default() -> Self {
        Self {
            rating_threshold: 3,
            min_new_examples: 10,
            acceptance_target: 0.7,
            accept_rate_window: 50,
        }
    }
}

impl RetrainPolicy {
    pub fn validate(&self) -> ServiceResult<()> {
        if !(1..=5).contains(&self.rating_threshold) {
            return Err(ServiceError::Validation("rating_threshold must lie in 1..=5".into()));
        }
        if self.min_new_examples == 0 {
            return Err(ServiceError::Validation("min_new_examples must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.acceptance_target) {
            return Err(ServiceError::Validation("acceptance_target must lie in [0, 1]".into()));
        }
        if self.accept_rate_window == 0 {
            return Err(ServiceError::Validation("accept_rate_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// One alarm as submitted over the API; the timestamp is parsed server-side
/// so a bad value fails only its own event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAlarm {
    pub time_on: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlarmAck {
    pub received: usize,
    pub persisted: usize,
    pub suppressed: usize,
    pub errors: Vec<EventError>,
}

/// A corrected example waiting for the next retrain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferedExample {
    pub id: i64,
    pub recommendation_id: Uuid,
    pub doc: PairedDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub seed: u64,
    pub examples_used: usize,
    pub buffer_examples: usize,
    pub previous_version: u64,
    pub previous_val_acc: Option<f64>,
    pub candidate_val_acc: Option<f64>,
    pub swapped: bool,
    pub model_version: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStatus {
    pub model_loaded: bool,
    pub model_version: u64,
    pub num_classes: usize,
    pub accept_rate: Option<f64>,
    pub resolved_in_window: usize,
    pub acceptance_target: f64,
    pub buffer_size: usize,
    pub min_new_examples: usize,
    pub retrain_eligible: bool,
    pub training: bool,
    pub last_retrain: Option<RetrainReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainTicket {
    pub state: String,
    pub seed: u64,
    pub buffer_examples: usize,
}
