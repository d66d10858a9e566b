//! Recommendation engine: alarm intake, on-demand recommendations, feedback
//! and the validation-guarded retraining job.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use alarm2action::ingest::{clean_text, parse_timestamp, AlarmEvent, CleaningConfig};
use alarm2action::markov::{fit_transitions, TransitionModel};
use alarm2action::sequencer::{DatasetSplit, PairedDocument};
use alarm2action::trainer::{evaluate, predict_topk, save_model, train, Checkpoint, CheckpointMeta, TrainConfig};
use alarm2action::vocab::{build_vocab, PAD_TOKEN};
use chrono::{DateTime, Duration, Utc};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};
use crate::store::{ResolveOutcome, Store};
use crate::types::{
    AlarmAck, EventError, FeedbackRecord, NextAlarm, RankedLabel, RawAlarm, Recommendation, RecommendationStatus,
    RetrainPolicy, RetrainReport, RetrainTicket, ServiceStatus, Verdict,
};

/// How many next-alarm hints accompany a recommendation.
const MARKOV_HINTS: usize = 3;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub cleaning: CleaningConfig,
    pub mem_days: u32,
    /// Used for retraining; its seed is offset by the new model version.
    pub train: TrainConfig,
    pub policy: RetrainPolicy,
    pub markov_alpha: f64,
    /// Where an accepted retrained model is written.
    pub model_path: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            cleaning: CleaningConfig::default(),
            mem_days: 20,
            train: TrainConfig::default(),
            policy: RetrainPolicy::default(),
            markov_alpha: 0.0,
            model_path: None,
        }
    }
}

/// The model currently answering requests.
#[derive(Debug)]
pub struct ServedModel {
    pub version: u64,
    pub checkpoint: Checkpoint,
    pub markov: Option<TransitionModel>,
}

/// Documents the original model was trained and validated on.
#[derive(Debug, Clone, Default)]
pub struct TrainingBase {
    pub train: Vec<PairedDocument>,
    pub validation: Vec<PairedDocument>,
}

pub struct Engine {
    cfg: EngineConfig,
    store: Arc<dyn Store>,
    model: RwLock<Option<Arc<ServedModel>>>,
    base: Mutex<TrainingBase>,
    intake: Mutex<()>,
    retraining: AtomicBool,
    job: Mutex<Option<JoinHandle<()>>>,
    last_retrain: Mutex<Option<RetrainReport>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn markov_sequences(docs: &[PairedDocument]) -> Vec<Vec<String>> {
    docs.iter()
        .map(|d| d.alarm_tokens.iter().filter(|t| *t != PAD_TOKEN).cloned().collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

fn fit_markov(docs: &[PairedDocument], alpha: f64) -> Option<TransitionModel> {
    fit_transitions(&markov_sequences(docs), alpha).ok()
}

impl Engine {
    /// `base.train` should already include previously absorbed corrections
    /// (see [`Engine::with_absorbed`]).
    pub fn new(
        cfg: EngineConfig,
        store: Arc<dyn Store>,
        base: TrainingBase,
        checkpoint: Option<Checkpoint>,
    ) -> ServiceResult<Arc<Self>> {
        cfg.policy.validate()?;
        cfg.train
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        cfg.cleaning
            .validate()
            .map_err(|e| ServiceError::Validation(e.to_string()))?;
        if cfg.mem_days == 0 {
            return Err(ServiceError::Validation("mem_days must be >= 1".into()));
        }
        let version = store.model_version()?.unwrap_or(1);
        let model = checkpoint.map(|checkpoint| {
            Arc::new(ServedModel {
                version,
                markov: fit_markov(&base.train, cfg.markov_alpha),
                checkpoint,
            })
        });
        Ok(Arc::new(Self {
            cfg,
            store,
            model: RwLock::new(model),
            base: Mutex::new(base),
            intake: Mutex::new(()),
            retraining: AtomicBool::new(false),
            job: Mutex::new(None),
            last_retrain: Mutex::new(None),
        }))
    }

    /// Appends corrections absorbed by earlier retrains to the base set.
    pub fn with_absorbed(mut base: TrainingBase, store: &dyn Store) -> ServiceResult<TrainingBase> {
        base.train.extend(store.absorbed()?);
        Ok(base)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn store(&self) -> &dyn Store {
        self.store.as_ref()
    }

    pub fn current_model(&self) -> Option<Arc<ServedModel>> {
        self.model.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Parses, cleans and persists alarms. Invalid events are reported one by
    /// one; repeats of an alarm already kept within the chatter window are
    /// suppressed.
    pub fn submit_alarms(&self, turbine_id: u32, events: &[RawAlarm]) -> ServiceResult<AlarmAck> {
        let mut ack = AlarmAck {
            received: events.len(),
            ..Default::default()
        };
        let mut valid = Vec::new();
        for (index, raw) in events.iter().enumerate() {
            let Some(time_on) = parse_timestamp(&raw.time_on) else {
                ack.errors.push(EventError {
                    index,
                    message: format!("invalid timestamp `{}`", raw.time_on),
                });
                continue;
            };
            let text = clean_text(&raw.text, &self.cfg.cleaning);
            if text.is_empty() {
                ack.errors.push(EventError {
                    index,
                    message: "alarm text is empty after cleaning".into(),
                });
                continue;
            }
            if time_on.timestamp_nanos_opt().is_none() {
                ack.errors.push(EventError {
                    index,
                    message: format!("timestamp `{}` out of range", raw.time_on),
                });
                continue;
            }
            valid.push(AlarmEvent {
                turbine_id,
                time_on,
                text,
            });
        }
        valid.sort_by_key(|e| e.time_on);

        let _guard = lock(&self.intake);
        let window = Duration::seconds(self.cfg.cleaning.chatter_window_s as i64);
        let mut kept: Vec<AlarmEvent> = Vec::with_capacity(valid.len());
        for e in valid {
            let repeats_batch = kept
                .iter()
                .any(|k| k.text == e.text && k.time_on <= e.time_on && e.time_on - k.time_on <= window);
            let repeats_stored = !repeats_batch
                && self
                    .store
                    .alarms_between(turbine_id, e.time_on - window, e.time_on)?
                    .iter()
                    .any(|k| k.text == e.text);
            if repeats_batch || repeats_stored {
                ack.suppressed += 1;
            } else {
                kept.push(e);
            }
        }
        self.store.insert_alarms(&kept)?;
        ack.persisted = kept.len();
        Ok(ack)
    }

    /// Builds the window `[anchor - mem_days, anchor]` (anchor defaults to the
    /// turbine's newest alarm), ranks labels and persists the pending
    /// recommendation before returning it.
    pub fn get_recommendations(
        &self,
        turbine_id: u32,
        k: usize,
        anchor: Option<DateTime<Utc>>,
    ) -> ServiceResult<Vec<Recommendation>> {
        if k == 0 {
            return Err(ServiceError::Validation("k must be >= 1".into()));
        }
        let model = self.current_model().ok_or(ServiceError::NoModelLoaded)?;
        let anchor = match anchor {
            Some(t) => t,
            None => self
                .store
                .latest_alarm_time(turbine_id)?
                .ok_or(ServiceError::NoAlarmsInWindow(turbine_id))?,
        };
        let window = self
            .store
            .alarms_between(turbine_id, anchor - Duration::days(self.cfg.mem_days as i64), anchor)?;
        if window.is_empty() {
            return Err(ServiceError::NoAlarmsInWindow(turbine_id));
        }
        let tokens: Vec<&str> = window.iter().map(|a| a.text.as_str()).collect();
        let ckpt = &model.checkpoint;
        let ranked = predict_topk(&ckpt.params, &ckpt.config, &tokens, &ckpt.vocab, k)
            .map_err(|e| ServiceError::Internal(e.to_string()))?
            .into_iter()
            .map(|(label, prob)| RankedLabel { label, prob })
            .collect();
        let markov_next = model.markov.as_ref().and_then(|m| {
            let last = tokens.last()?;
            if m.is_absorbing(last).ok()? {
                return None;
            }
            let next = m.predict_next(last, MARKOV_HINTS).ok()?;
            Some(next.into_iter().map(|(alarm, prob)| NextAlarm { alarm, prob }).collect())
        });
        let rec = Recommendation {
            id: Uuid::new_v4(),
            turbine_id,
            created_at: Utc::now(),
            alarm_window: window,
            ranked,
            markov_next,
            status: RecommendationStatus::Pending,
            model_version: model.version,
            resolved_at: None,
        };
        self.store.insert_recommendation(&rec)?;
        Ok(vec![rec])
    }

    pub fn recommendation(&self, id: Uuid) -> ServiceResult<Recommendation> {
        self.store.recommendation(id)?.ok_or(ServiceError::UnknownRecommendation(id))
    }

    pub fn list_recommendations(
        &self,
        status: Option<RecommendationStatus>,
        limit: usize,
    ) -> ServiceResult<Vec<Recommendation>> {
        self.store.list_recommendations(status, limit)
    }

    /// Resolves a pending recommendation. A rejection with a corrected label
    /// turns the recommendation's alarm window into a new training example.
    pub fn submit_feedback(&self, fb: &FeedbackRecord) -> ServiceResult<Recommendation> {
        if !(1..=5).contains(&fb.rating) {
            return Err(ServiceError::Validation("rating must lie in 1..=5".into()));
        }
        let correction = fb
            .corrected_label
            .as_deref()
            .map(|l| clean_text(l, &self.cfg.cleaning))
            .filter(|l| !l.is_empty());
        let rec = self.recommendation(fb.recommendation_id)?;
        if rec.status != RecommendationStatus::Pending {
            return Err(ServiceError::AlreadyResolved(rec.id));
        }
        let status = match (fb.verdict, &correction) {
            (Verdict::Accept, Some(_)) => {
                return Err(ServiceError::Validation("an accepted recommendation takes no corrected_label".into()))
            }
            (Verdict::Accept, None) => RecommendationStatus::Accepted,
            (Verdict::Reject, Some(_)) => RecommendationStatus::Corrected,
            (Verdict::Reject, None) if fb.rating < self.cfg.policy.rating_threshold => {
                return Err(ServiceError::MissingCorrection {
                    threshold: self.cfg.policy.rating_threshold,
                })
            }
            (Verdict::Reject, None) => RecommendationStatus::Rejected,
        };
        let example = correction.map(|label| PairedDocument {
            turbine_id: rec.turbine_id,
            response_time: rec.alarm_window.last().map(|a| a.time_on).unwrap_or(fb.at),
            label,
            alarm_tokens: rec.alarm_window.iter().map(|a| a.text.clone()).collect(),
        });
        match self.store.resolve(fb, status, example.as_ref())? {
            ResolveOutcome::Resolved(r) => Ok(r),
            ResolveOutcome::NotFound => Err(ServiceError::UnknownRecommendation(fb.recommendation_id)),
            ResolveOutcome::AlreadyResolved => Err(ServiceError::AlreadyResolved(fb.recommendation_id)),
        }
    }

    /// Accepted share of the most recently resolved recommendations, and
    /// how many were counted.
    pub fn accept_rate(&self, policy: &RetrainPolicy) -> ServiceResult<(Option<f64>, usize)> {
        let recent = self.store.recent_outcomes(policy.accept_rate_window)?;
        let accepted = recent.iter().filter(|s| **s == RecommendationStatus::Accepted).count();
        let rate = (!recent.is_empty()).then(|| accepted as f64 / recent.len() as f64);
        Ok((rate, recent.len()))
    }

    fn eligible(&self, policy: &RetrainPolicy) -> ServiceResult<(bool, usize)> {
        let buffered = self.store.buffer()?.len();
        let (rate, _) = self.accept_rate(policy)?;
        let below_target = rate.is_some_and(|r| r < policy.acceptance_target);
        Ok((buffered >= policy.min_new_examples || below_target, buffered))
    }

    pub fn status(&self) -> ServiceResult<ServiceStatus> {
        let policy = &self.cfg.policy;
        let model = self.current_model();
        let (accept_rate, resolved_in_window) = self.accept_rate(policy)?;
        let (retrain_eligible, buffer_size) = self.eligible(policy)?;
        Ok(ServiceStatus {
            model_loaded: model.is_some(),
            model_version: model.as_ref().map(|m| m.version).unwrap_or(0),
            num_classes: model.as_ref().map(|m| m.checkpoint.config.num_classes).unwrap_or(0),
            accept_rate,
            resolved_in_window,
            acceptance_target: policy.acceptance_target,
            buffer_size,
            min_new_examples: policy.min_new_examples,
            retrain_eligible,
            training: self.retraining.load(Ordering::SeqCst),
            last_retrain: lock(&self.last_retrain).clone(),
        })
    }

    pub fn last_retrain(&self) -> Option<RetrainReport> {
        lock(&self.last_retrain).clone()
    }

    /// Starts a background retrain when `policy` allows it.
    pub fn trigger_retrain(self: &Arc<Self>, policy: Option<RetrainPolicy>) -> ServiceResult<RetrainTicket> {
        let policy = policy.unwrap_or_else(|| self.cfg.policy.clone());
        policy.validate()?;
        let current = self.current_model().ok_or(ServiceError::NoModelLoaded)?;
        if self
            .retraining
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(ServiceError::RetrainInProgress);
        }
        let checked = self.eligible(&policy);
        let buffered = match checked {
            Ok((true, n)) => n,
            Ok((false, n)) => {
                self.retraining.store(false, Ordering::SeqCst);
                return Err(ServiceError::InsufficientData {
                    buffered: n,
                    min: policy.min_new_examples,
                    target: policy.acceptance_target,
                });
            }
            Err(e) => {
                self.retraining.store(false, Ordering::SeqCst);
                return Err(e);
            }
        };
        let seed = self.cfg.train.seed.wrapping_add(current.version + 1);
        let engine = Arc::clone(self);
        let handle = std::thread::spawn(move || {
            let started_at = Utc::now();
            let report = engine.run_retrain(&current, seed, started_at).unwrap_or_else(|e| {
                tracing::error!(error = %e, "retrain failed");
                RetrainReport {
                    started_at,
                    finished_at: Utc::now(),
                    seed,
                    examples_used: 0,
                    buffer_examples: 0,
                    previous_version: current.version,
                    previous_val_acc: None,
                    candidate_val_acc: None,
                    swapped: false,
                    model_version: current.version,
                    error: Some(e.to_string()),
                }
            });
            *lock(&engine.last_retrain) = Some(report);
            engine.retraining.store(false, Ordering::SeqCst);
        });
        *lock(&self.job) = Some(handle);
        Ok(RetrainTicket {
            state: "started".into(),
            seed,
            buffer_examples: buffered,
        })
    }

    /// Blocks until the running retrain (if any) has finished.
    pub fn wait_for_retrain(&self) -> Option<RetrainReport> {
        let handle = lock(&self.job).take();
        if let Some(h) = handle {
            let _ = h.join();
        }
        self.last_retrain()
    }

    fn run_retrain(&self, current: &ServedModel, seed: u64, started_at: DateTime<Utc>) -> ServiceResult<RetrainReport> {
        let internal = |e: alarm2action::trainer::TrainError| ServiceError::Internal(e.to_string());
        let buffer = self.store.buffer()?;
        let base = lock(&self.base).clone();
        let mut train_docs = base.train.clone();
        train_docs.extend(buffer.iter().map(|b| b.doc.clone()));
        let vocab = build_vocab(&train_docs).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let mcfg = alarm2action::ModelConfig {
            vocab_size: vocab.len(),
            num_classes: vocab.num_labels(),
            ..current.checkpoint.config.clone()
        };
        let tcfg = TrainConfig {
            seed,
            ..self.cfg.train.clone()
        };
        let split = DatasetSplit {
            train: train_docs.clone(),
            validation: base.validation.clone(),
            test: Vec::new(),
        };
        tracing::info!(seed, examples = train_docs.len(), buffered = buffer.len(), "retrain started");
        let outcome = train(&split, &vocab, &mcfg, &tcfg).map_err(internal)?;
        // The last epoch, not the best-validation one: validation holds no
        // examples of labels introduced by corrections, so it would favor
        // early epochs that have not learned them yet.
        let (params, epoch) = (outcome.params, tcfg.epochs);

        let old = &current.checkpoint;
        let previous_val_acc = evaluate(&old.params, &old.config, &base.validation, &old.vocab)
            .map_err(internal)?
            .accuracy;
        let candidate_val_acc = evaluate(&params, &mcfg, &base.validation, &vocab).map_err(internal)?.accuracy;
        let swapped = match (candidate_val_acc, previous_val_acc) {
            (Some(c), Some(p)) => c >= p,
            _ => true,
        };
        let mut report = RetrainReport {
            started_at,
            finished_at: Utc::now(),
            seed,
            examples_used: train_docs.len(),
            buffer_examples: buffer.len(),
            previous_version: current.version,
            previous_val_acc,
            candidate_val_acc,
            swapped,
            model_version: current.version,
            error: None,
        };
        if !swapped {
            tracing::warn!(?candidate_val_acc, ?previous_val_acc, "candidate model rejected; keeping current model");
            return Ok(report);
        }

        let version = current.version + 1;
        let checkpoint = Checkpoint {
            config: mcfg,
            params,
            adam: Some(outcome.adam),
            vocab,
            meta: CheckpointMeta {
                kind: "retrained".into(),
                epoch,
                val_acc: candidate_val_acc,
                seed,
            },
        };
        if let Some(path) = &self.cfg.model_path {
            save_model(path, &checkpoint).map_err(internal)?;
        }
        let served = Arc::new(ServedModel {
            version,
            markov: fit_markov(&train_docs, self.cfg.markov_alpha),
            checkpoint,
        });
        let ids: Vec<i64> = buffer.iter().map(|b| b.id).collect();
        {
            let mut slot = self.model.write().unwrap_or_else(|p| p.into_inner());
            self.store.set_model_version(version)?;
            self.store.absorb_buffer(&ids)?;
            lock(&self.base).train.extend(buffer.into_iter().map(|b| b.doc));
            *slot = Some(served);
        }
        tracing::info!(version, ?candidate_val_acc, "model swapped");
        report.model_version = version;
        report.finished_at = Utc::now();
        Ok(report)
    }
}
