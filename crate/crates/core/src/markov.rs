//! First-order Markov chain over alarm tokens, used for next-alarm hints and
//! sequence log-likelihood scores. It never feeds the classifier.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarkovError {
    #[error("no sequences to fit")]
    EmptyInput,
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("smoothing alpha must be finite and >= 0")]
    InvalidAlpha,
    #[error("a sequence needs at least two states to score")]
    SequenceTooShort,
}

pub type Result<T> = std::result::Result<T, MarkovError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovFile", into = "MarkovFile")]
pub struct TransitionModel {
    states: Vec<String>,
    index: HashMap<String, usize>,
    /// `S x S`, row-major.
    counts: Vec<u64>,
    /// `S x S`, row-major; row-stochastic except absorbing rows.
    probs: Vec<f64>,
    /// Rows without observations when `alpha == 0`; their probabilities are zero.
    absorbing: Vec<bool>,
    alpha: f64,
}

/// On-disk form of `markov.json`.
#[derive(Serialize, Deserialize)]
struct MarkovFile {
    states: Vec<String>,
    probs: Vec<f64>,
    counts: Vec<u64>,
    alpha: f64,
}

impl TryFrom<MarkovFile> for TransitionModel {
    type Error = String;

    fn try_from(f: MarkovFile) -> std::result::Result<Self, String> {
        let s = f.states.len();
        if f.probs.len() != s * s || f.counts.len() != s * s {
            return Err(format!("expected {} transition entries", s * s));
        }
        let absorbing = (0..s)
            .map(|i| f.counts[i * s..(i + 1) * s].iter().all(|c| *c == 0) && f.alpha == 0.0)
            .collect();
        Ok(Self {
            index: f.states.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect(),
            states: f.states,
            counts: f.counts,
            probs: f.probs,
            absorbing,
            alpha: f.alpha,
        })
    }
}

impl From<TransitionModel> for MarkovFile {
    fn from(m: TransitionModel) -> Self {
        MarkovFile {
            states: m.states,
            probs: m.probs,
            counts: m.counts,
            alpha: m.alpha,
        }
    }
}

/// Counts adjacent pairs across all sequences and normalizes
/// `counts + alpha` row by row. States are sorted.
pub fn fit_transitions<S: AsRef<str>>(sequences: &[Vec<S>], alpha: f64) -> Result<TransitionModel> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(MarkovError::InvalidAlpha);
    }
    let states: Vec<String> = sequences
        .iter()
        .flatten()
        .map(|s| s.as_ref())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    if states.is_empty() {
        return Err(MarkovError::EmptyInput);
    }
    let index: HashMap<String, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
    let n = states.len();
    let mut counts = vec![0u64; n * n];
    for seq in sequences {
        for pair in seq.windows(2) {
            let from = index[pair[0].as_ref()];
            let to = index[pair[1].as_ref()];
            counts[from * n + to] += 1;
        }
    }
    let mut probs = vec![0.0; n * n];
    let mut absorbing = vec![false; n];
    for i in 0..n {
        let row = &counts[i * n..(i + 1) * n];
        let total: f64 = row.iter().map(|&c| c as f64 + alpha).sum();
        if total == 0.0 {
            absorbing[i] = true;
            continue;
        }
        for j in 0..n {
            probs[i * n + j] = (row[j] as f64 + alpha) / total;
        }
    }
    Ok(TransitionModel {
        states,
        index,
        counts,
        probs,
        absorbing,
        alpha,
    })
}

impl TransitionModel {
    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn state(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| MarkovError::UnknownState(name.to_string()))
    }

    pub fn count(&self, from: &str, to: &str) -> Result<u64> {
        Ok(self.counts[self.state(from)? * self.states.len() + self.state(to)?])
    }

    pub fn prob(&self, from: &str, to: &str) -> Result<f64> {
        Ok(self.probs[self.state(from)? * self.states.len() + self.state(to)?])
    }

    pub fn row(&self, from: &str) -> Result<&[f64]> {
        let i = self.state(from)?;
        let n = self.states.len();
        Ok(&self.probs[i * n..(i + 1) * n])
    }

    /// True for a state that was never followed by anything (alpha = 0).
    pub fn is_absorbing(&self, state: &str) -> Result<bool> {
        Ok(self.absorbing[self.state(state)?])
    }

    /// The `k` most likely successors of `current`, highest first; equal
    /// probabilities keep state order.
    pub fn predict_next(&self, current: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let row = self.row(current)?;
        let mut order: Vec<usize> = (0..self.states.len()).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        Ok(order
            .into_iter()
            .take(k)
            .map(|j| (self.states[j].clone(), row[j]))
            .collect())
    }

    /// Sum of log transition probabilities; `-inf` when any transition is impossible.
    pub fn sequence_logprob<S: AsRef<str>>(&self, seq: &[S]) -> Result<f64> {
        if seq.len() < 2 {
            return Err(MarkovError::SequenceTooShort);
        }
        let ids: Vec<usize> = seq.iter().map(|s| self.state(s.as_ref())).collect::<Result<_>>()?;
        let n = self.states.len();
        Ok(ids.windows(2).map(|w| self.probs[w[0] * n + w[1]].ln()).sum())
    }
}
