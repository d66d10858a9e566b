use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encode_tokens_for_model, Result, UnknownLabelPolicy};
use crate::rnn::{forward, ModelConfig, ModelParams};
use crate::sequencer::PairedDocument;
use crate::vocab::Vocabulary;

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate().skip(1) {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// `None` for a label that was never seen in training.
    pub truth: Option<usize>,
    pub predicted: usize,
}

impl PredictionRecord {
    pub fn is_correct(&self) -> bool {
        self.truth == Some(self.predicted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    pub predicted: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Examples counted in `correct + incorrect`.
    pub evaluated: usize,
    pub correct: usize,
    pub incorrect: usize,
    /// `correct / evaluated`; `None` when nothing was evaluated.
    pub accuracy: Option<f64>,
    /// Documents whose label is missing from the vocabulary.
    pub unknown_label: usize,
    /// Unknown-label documents left out under [`UnknownLabelPolicy::Drop`].
    pub dropped: usize,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]` over known-label examples.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<PredictionRecord>,
}

pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, docs: &[PairedDocument], vocab: &Vocabulary) -> Result<EvalReport> {
    evaluate_with(params, cfg, docs, vocab, UnknownLabelPolicy::CountAsMiss)
}

pub fn evaluate_with(
    params: &ModelParams,
    cfg: &ModelConfig,
    docs: &[PairedDocument],
    vocab: &Vocabulary,
    policy: UnknownLabelPolicy,
) -> Result<EvalReport> {
    let predictions: Vec<PredictionRecord> = docs
        .par_iter()
        .map(|doc| -> Result<PredictionRecord> {
            let tokens = encode_tokens_for_model(&doc.alarm_tokens, vocab, cfg.seq_len);
            let (probs, _) = forward(params, cfg, &tokens)?;
            Ok(PredictionRecord {
                truth: vocab.label_id(&doc.label),
                predicted: argmax(&probs),
            })
        })
        .collect::<Result<_>>()?;
    Ok(report_from_predictions(predictions, vocab, policy))
}

pub(crate) fn report_from_predictions(
    all: Vec<PredictionRecord>,
    vocab: &Vocabulary,
    policy: UnknownLabelPolicy,
) -> EvalReport {
    let unknown_label = all.iter().filter(|p| p.truth.is_none()).count();
    let predictions: Vec<PredictionRecord> = match policy {
        UnknownLabelPolicy::CountAsMiss => all,
        UnknownLabelPolicy::Drop => all.into_iter().filter(|p| p.truth.is_some()).collect(),
    };
    let dropped = if policy == UnknownLabelPolicy::Drop { unknown_label } else { 0 };
    let n = vocab.num_labels();
    let mut confusion = vec![vec![0usize; n]; n];
    let mut predicted_count = vec![0usize; n];
    for p in &predictions {
        predicted_count[p.predicted] += 1;
        if let Some(t) = p.truth {
            confusion[t][p.predicted] += 1;
        }
    }
    let correct = predictions.iter().filter(|p| p.is_correct()).count();
    let evaluated = predictions.len();
    let per_class = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            ClassMetrics {
                label: vocab.label(c).unwrap_or_default().to_string(),
                support,
                predicted: predicted_count[c],
                precision: (predicted_count[c] > 0).then(|| tp as f64 / predicted_count[c] as f64),
                recall: (support > 0).then(|| tp as f64 / support as f64),
            }
        })
        .collect();
    EvalReport {
        evaluated,
        correct,
        incorrect: evaluated - correct,
        accuracy: (evaluated > 0).then(|| correct as f64 / evaluated as f64),
        unknown_label,
        dropped,
        per_class,
        confusion,
        predictions,
    }
}

/// The `k` most probable labels, most probable first.
pub fn predict_topk<S: AsRef<str>>(
    params: &ModelParams,
    cfg: &ModelConfig,
    alarm_tokens: &[S],
    vocab: &Vocabulary,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let tokens = encode_tokens_for_model(alarm_tokens, vocab, cfg.seq_len);
    let (probs, _) = forward(params, cfg, &tokens)?;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k.max(1))
        .map(|i| (vocab.label(i).unwrap_or_default().to_string(), probs[i]))
        .collect())
}
