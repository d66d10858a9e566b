//! Repair-recommendation service: alarms in, ranked repair actions out, and
//! operator feedback folded back into the model through guarded retraining.

pub mod config;
pub mod engine;
pub mod error;
pub mod http;
pub mod store;
pub mod types;

use std::sync::Arc;

use alarm2action::sequencer::{read_jsonl, SplitIndices};
use alarm2action::trainer::Checkpoint;

pub use config::ServiceConfig;
pub use engine::{Engine, EngineConfig, ServedModel, TrainingBase};
pub use error::{ServiceError, ServiceResult};
pub use store::{MemoryStore, SqliteStore, Store};

fn load_base(cfg: &ServiceConfig) -> ServiceResult<TrainingBase> {
    let (Some(dataset), Some(split)) = (&cfg.dataset, &cfg.split) else {
        return Ok(TrainingBase::default());
    };
    let docs = read_jsonl(dataset).map_err(|e| ServiceError::Validation(e.to_string()))?;
    let text = std::fs::read_to_string(split)
        .map_err(|e| ServiceError::Validation(format!("cannot read {}: {e}", split.display())))?;
    let idx: SplitIndices = serde_json::from_str(&text).map_err(|e| ServiceError::Validation(e.to_string()))?;
    let parts = idx.materialize(&docs).map_err(|e| ServiceError::Validation(e.to_string()))?;
    Ok(TrainingBase {
        train: parts.train,
        validation: parts.validation,
    })
}

/// Opens storage, loads the checkpoint and training data named in `cfg`.
pub fn build_engine(cfg: &ServiceConfig) -> ServiceResult<Arc<Engine>> {
    let store: Arc<dyn Store> = match &cfg.database {
        Some(path) => Arc::new(SqliteStore::open(path)?),
        None => Arc::new(MemoryStore::new()),
    };
    let checkpoint = match &cfg.model_path {
        Some(p) if p.exists() => Some(Checkpoint::load(p).map_err(|e| ServiceError::Validation(e.to_string()))?),
        _ => None,
    };
    if checkpoint.is_none() {
        tracing::warn!("no model loaded; recommendations are unavailable until one is provided");
    }
    let base = Engine::with_absorbed(load_base(cfg)?, store.as_ref())?;
    Engine::new(
        EngineConfig {
            cleaning: cfg.cleaning.clone(),
            mem_days: cfg.mem_days,
            train: cfg.train.clone(),
            policy: cfg.policy.clone(),
            markov_alpha: cfg.markov_alpha,
            model_path: cfg.model_path.clone(),
        },
        store,
        base,
        checkpoint,
    )
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> ServiceResult<()> {
    let engine = build_engine(&cfg)?;
    let state = http::AppState {
        engine,
        token: cfg.token.clone(),
        default_k: cfg.default_k,
    };
    let app = http::router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&cfg.bind)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {}: {e}", cfg.bind)))?;
    tracing::info!(bind = %cfg.bind, "service listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
