//! Mini-batch training, evaluation and checkpoints.
//!
//! Each batch runs per-example forward/backward passes in parallel over
//! fixed-size chunks, sums the chunk gradients in chunk order (so results do
//! not depend on the thread count), averages them, clips the global norm
//! and applies one Adam step.

mod checkpoint;
mod eval;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rnn::{
    adam_step, backward_into, clip_gradients, forward, loss, AdamState, ModelConfig, ModelParams, RnnError,
};
use crate::sequencer::{DatasetSplit, PairedDocument};
use crate::vocab::{VocabError, Vocabulary, PAD_INDEX};

pub use checkpoint::{load_model, save_model, Checkpoint, CheckpointMeta};
pub use eval::{argmax, evaluate, evaluate_with, predict_topk, ClassMetrics, EvalReport, PredictionRecord};

/// Examples per parallel work unit inside a batch.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training partition is empty")]
    EmptyTrainingSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergenceDetected { epoch: usize, last_good: Box<ModelParams> },
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint was trained against vocabulary {expected}, got {found}")]
    VocabularyHashMismatch { expected: String, found: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// What to do with evaluation documents whose label never occurred in training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLabelPolicy {
    #[default]
    CountAsMiss,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Log a progress line every this many batches; 0 disables it.
    pub progress_every: usize,
    pub unknown_labels: UnknownLabelPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 0.01,
            clip_threshold: 1.0,
            batch_size: 16,
            seed: 0,
            progress_every: 0,
            unknown_labels: UnknownLabelPolicy::CountAsMiss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig("lr must be > 0"));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(TrainError::InvalidConfig("clip_threshold must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// A document as model input.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// Token ids of `tokens`, keeping the newest `seq_len` and left-padding
/// shorter sequences with the padding index.
pub fn encode_tokens_for_model<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, seq_len: usize) -> Vec<usize> {
    let ids = vocab.encode_tokens(tokens);
    if ids.len() >= seq_len {
        ids[ids.len() - seq_len..].to_vec()
    } else {
        let mut out = vec![PAD_INDEX; seq_len - ids.len()];
        out.extend(ids);
        out
    }
}

pub fn encode_example(doc: &PairedDocument, vocab: &Vocabulary, seq_len: usize) -> Result<Example> {
    let label = vocab
        .label_id(&doc.label)
        .ok_or_else(|| VocabError::UnknownLabel(doc.label.clone()))?;
    Ok(Example {
        tokens: encode_tokens_for_model(&doc.alarm_tokens, vocab, seq_len),
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when there is no validation partition.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_acc: f64,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Parameters at the epoch with the highest validation accuracy
    /// (earliest on ties); `None` without a validation partition.
    pub best: Option<BestEpoch>,
    pub history: Vec<EpochStats>,
    pub pipeline_hash: String,
}

fn epoch_orders(n: usize, tcfg: &TrainConfig) -> Vec<Vec<usize>> {
    // Separate stream from parameter init, so LSTM and BiLSTM runs with the
    // same seed see identical batches.
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5EED_0F_BA7C4E5);
    (0..tcfg.epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

fn hash_pipeline(examples: &[Example], orders: &[Vec<usize>], tcfg: &TrainConfig) -> String {
    let mut h = Sha256::new();
    for ex in examples {
        h.update((ex.tokens.len() as u64).to_le_bytes());
        for t in &ex.tokens {
            h.update((*t as u64).to_le_bytes());
        }
        h.update((ex.label as u64).to_le_bytes());
    }
    for order in orders {
        for i in order {
            h.update((*i as u64).to_le_bytes());
        }
    }
    h.update(tcfg.batch_size.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the encoded training data and every epoch's batch order.
/// Independent of the model architecture.
pub fn pipeline_fingerprint(split: &DatasetSplit, vocab: &Vocabulary, seq_len: usize, tcfg: &TrainConfig) -> Result<String> {
    let examples = split
        .train
        .iter()
        .map(|d| encode_example(d, vocab, seq_len))
        .collect::<Result<Vec<_>>>()?;
    Ok(hash_pipeline(&examples, &epoch_orders(examples.len(), tcfg), tcfg))
}

/// Initializes parameters from `tcfg.seed` and trains.
pub fn train(split: &DatasetSplit, vocab: &Vocabulary, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    mcfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let params = ModelParams::init(mcfg, &mut rng);
    train_from(split, vocab, mcfg, tcfg, params)
}

/// Trains starting from `params` (e.g. with a pre-loaded embedding).
pub fn train_from(
    split: &DatasetSplit,
    vocab: &Vocabulary,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    mcfg.validate()?;
    params.check_shapes(mcfg)?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if vocab.len() != mcfg.vocab_size || vocab.num_labels() != mcfg.num_classes {
        return Err(RnnError::ShapeMismatch(format!(
            "vocabulary has {} tokens / {} labels, model expects {} / {}",
            vocab.len(),
            vocab.num_labels(),
            mcfg.vocab_size,
            mcfg.num_classes
        ))
        .into());
    }
    let examples = split
        .train
        .iter()
        .map(|d| encode_example(d, vocab, mcfg.seq_len))
        .collect::<Result<Vec<_>>>()?;
    let orders = epoch_orders(examples.len(), tcfg);
    let pipeline_hash = hash_pipeline(&examples, &orders, tcfg);

    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<BestEpoch> = None;
    let mut batches_done = 0usize;

    for (epoch_idx, order) in orders.iter().enumerate() {
        let epoch = epoch_idx + 1;
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tcfg.batch_size) {
            let (mut grads, b_loss, b_correct) = batch_gradients(&params, mcfg, &examples, batch)?;
            if !b_loss.is_finite() {
                return Err(TrainError::DivergenceDetected {
                    epoch,
                    last_good: Box::new(params),
                });
            }
            loss_sum += b_loss;
            correct += b_correct;
            grads.scale(1.0 / batch.len() as f64);
            clip_gradients(&mut grads, tcfg.clip_threshold);
            match adam_step(&mut params, &grads, &mut adam, tcfg.lr) {
                Ok(()) => {}
                Err(RnnError::NonFiniteGradient) => {
                    return Err(TrainError::DivergenceDetected {
                        epoch,
                        last_good: Box::new(params),
                    })
                }
                Err(e) => return Err(e.into()),
            }
            batches_done += 1;
            if tcfg.progress_every > 0 && batches_done % tcfg.progress_every == 0 {
                tracing::info!(epoch, batch = batches_done, loss = b_loss / batch.len() as f64, "training");
            }
        }
        let val_acc = if split.validation.is_empty() {
            None
        } else {
            evaluate_with(&params, mcfg, &split.validation, vocab, tcfg.unknown_labels)?.accuracy
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            train_acc: correct as f64 / examples.len() as f64,
            val_acc,
        };
        tracing::debug!(?stats, "epoch done");
        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|b| acc > b.val_acc) {
                best = Some(BestEpoch {
                    epoch,
                    val_acc: acc,
                    params: params.clone(),
                });
            }
        }
        history.push(stats);
    }

    Ok(TrainOutcome {
        config: mcfg.clone(),
        params,
        adam,
        best,
        history,
        pipeline_hash,
    })
}

/// Summed gradients, summed loss and number of correct argmax predictions
/// over `batch` (indices into `examples`).
fn batch_gradients(
    params: &ModelParams,
    mcfg: &ModelConfig,
    examples: &[Example],
    batch: &[usize],
) -> Result<(ModelParams, f64, usize)> {
    let partials = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| -> Result<(ModelParams, f64, usize)> {
            let mut grads = ModelParams::zeros(mcfg);
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let ex = &examples[i];
                let (probs, cache) = forward(params, mcfg, &ex.tokens)?;
                loss_sum += loss(&probs, ex.label)?;
                correct += usize::from(argmax(&probs) == ex.label);
                backward_into(params, mcfg, &cache, ex.label, &mut grads)?;
            }
            Ok((grads, loss_sum, correct))
        })
        .collect::<Vec<_>>();
    let mut iter = partials.into_iter();
    let (mut grads, mut loss_sum, mut correct) = iter.next().expect("batch is non-empty")?;
    for part in iter {
        let (g, l, c) = part?;
        grads.add_assign(&g);
        loss_sum += l;
        correct += c;
    }
    Ok((grads, loss_sum, correct))
}

/// Writes `epoch,train_loss,train_acc,val_acc`; a missing validation accuracy
/// is an empty field.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for h in history {
        let val = h.val_acc.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", h.epoch, h.train_loss, h.train_acc, val));
    }
    std::fs::write(path, out)?;
    Ok(())
}
