//! Service configuration: a TOML file plus `A2A_*` environment overrides.

use std::path::{Path, PathBuf};

use alarm2action::ingest::CleaningConfig;
use alarm2action::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::types::RetrainPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Checkpoint served at startup and overwritten by accepted retrains.
    pub model_path: Option<PathBuf>,
    /// `dataset.jsonl` and `split.json` the model was trained from.
    pub dataset: Option<PathBuf>,
    pub split: Option<PathBuf>,
    /// SQLite file; in-memory storage when unset.
    pub database: Option<PathBuf>,
    /// Required in the `x-api-token` header when set.
    pub token: Option<String>,
    /// Directory of static assets served under `/`.
    pub static_dir: Option<PathBuf>,
    pub mem_days: u32,
    pub markov_alpha: f64,
    pub default_k: usize,
    pub policy: RetrainPolicy,
    pub train: TrainConfig,
    pub cleaning: CleaningConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            model_path: None,
            dataset: None,
            split: None,
            database: None,
            token: None,
            static_dir: None,
            mem_days: 20,
            markov_alpha: 0.0,
            default_k: 3,
            policy: RetrainPolicy::default(),
            train: TrainConfig::default(),
            cleaning: CleaningConfig::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: String) -> ServiceResult<T> {
    raw.parse()
        .map_err(|_| ServiceError::Validation(format!("cannot parse environment variable {key}=`{raw}`")))
}

impl ServiceConfig {
    /// Reads `path` (if given) and applies overrides looked up through `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> ServiceResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Validation(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| ServiceError::Validation(format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        cfg.apply_env(env)?;
        cfg.policy.validate()?;
        Ok(cfg)
    }

    pub fn from_process_env(path: Option<&Path>) -> ServiceResult<Self> {
        Self::load(path, |k| std::env::var(k).ok())
    }

    fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> ServiceResult<()> {
        if let Some(v) = env("A2A_BIND") {
            self.bind = v;
        }
        if let Some(v) = env("A2A_MODEL_PATH") {
            self.model_path = Some(v.into());
        }
        if let Some(v) = env("A2A_DATASET") {
            self.dataset = Some(v.into());
        }
        if let Some(v) = env("A2A_SPLIT") {
            self.split = Some(v.into());
        }
        if let Some(v) = env("A2A_DATABASE") {
            self.database = Some(v.into());
        }
        if let Some(v) = env("A2A_TOKEN") {
            self.token = Some(v);
        }
        if let Some(v) = env("A2A_STATIC_DIR") {
            self.static_dir = Some(v.into());
        }
        if let Some(v) = env("A2A_RATING_THRESHOLD") {
            self.policy.rating_threshold = parse_env("A2A_RATING_THRESHOLD", v)?;
        }
        if let Some(v) = env("A2A_MIN_NEW_EXAMPLES") {
            self.policy.min_new_examples = parse_env("A2A_MIN_NEW_EXAMPLES", v)?;
        }
        if let Some(v) = env("A2A_ACCEPTANCE_TARGET") {
            self.policy.acceptance_target = parse_env("A2A_ACCEPTANCE_TARGET", v)?;
        }
        if let Some(v) = env("A2A_ACCEPT_RATE_WINDOW") {
            self.policy.accept_rate_window = parse_env("A2A_ACCEPT_RATE_WINDOW", v)?;
        }
        Ok(())
    }
}
