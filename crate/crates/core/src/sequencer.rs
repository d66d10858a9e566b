//! Pairing of repair responses with their preceding alarms, fixed-length
//! documents and the train/validation/test partition.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AlarmEvent, ResponseEvent};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("invalid sequencer config: {0}")]
    InvalidConfig(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("split refers to document {0}, but the dataset is smaller")]
    IndexOutOfRange(usize),
}

pub type Result<T> = std::result::Result<T, SequenceError>;

/// One training example: a response label and the alarms preceding it,
/// oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedDocument {
    pub turbine_id: u32,
    pub response_time: DateTime<Utc>,
    pub label: String,
    pub alarm_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequencerConfig {
    /// Association window between an alarm and a later response, in days.
    pub mem_days: u32,
    pub target_len: usize,
    pub pad_token: String,
    pub holdout_val: f64,
    pub holdout_test_of_val: f64,
    pub seed: u64,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        Self {
            mem_days: 20,
            target_len: 75,
            pad_token: crate::vocab::PAD_TOKEN.to_string(),
            holdout_val: 0.3,
            holdout_test_of_val: 0.5,
            seed: 0,
        }
    }
}

impl SequencerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_val > 0.0 && self.holdout_val < 1.0) {
            return Err(SequenceError::InvalidConfig("holdout_val must lie in (0, 1)"));
        }
        if !(self.holdout_test_of_val > 0.0 && self.holdout_test_of_val < 1.0) {
            return Err(SequenceError::InvalidConfig("holdout_test_of_val must lie in (0, 1)"));
        }
        if self.target_len == 0 {
            return Err(SequenceError::InvalidConfig("target_len must be >= 1"));
        }
        Ok(())
    }

    pub fn mem_window(&self) -> Duration {
        Duration::days(self.mem_days as i64)
    }
}

/// Documents built for one turbine, plus the responses that had no alarm
/// inside their window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pairing {
    pub documents: Vec<PairedDocument>,
    pub skipped_responses: usize,
}

/// Pairs each response with every alarm in the closed window
/// `[response_time - mem_days, response_time]`. Both inputs must be sorted
/// by time; an alarm may appear in several documents.
pub fn build_pairs(alarms: &[AlarmEvent], responses: &[ResponseEvent], cfg: &SequencerConfig) -> Pairing {
    let window = cfg.mem_window();
    let mut out = Pairing::default();
    // Two-pointer sweep over the sorted alarm list.
    let mut lo = 0usize;
    let mut hi = 0usize;
    for response in responses {
        let start = response.time_on - window;
        while lo < alarms.len() && alarms[lo].time_on < start {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < alarms.len() && alarms[hi].time_on <= response.time_on {
            hi += 1;
        }
        if lo == hi {
            out.skipped_responses += 1;
            continue;
        }
        out.documents.push(PairedDocument {
            turbine_id: response.turbine_id,
            response_time: response.time_on,
            label: response.text.clone(),
            alarm_tokens: alarms[lo..hi].iter().map(|a| a.text.clone()).collect(),
        });
    }
    out
}

/// Runs [`build_pairs`] for every turbine, in turbine order.
pub fn build_fleet_pairs(
    alarms: &BTreeMap<u32, Vec<AlarmEvent>>,
    responses: &BTreeMap<u32, Vec<ResponseEvent>>,
    cfg: &SequencerConfig,
) -> Pairing {
    let mut out = Pairing::default();
    for (id, rs) in responses {
        let a = alarms.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let p = build_pairs(a, rs, cfg);
        out.documents.extend(p.documents);
        out.skipped_responses += p.skipped_responses;
    }
    out
}

/// Truncates to the most recent `target_len` alarms or left-pads with the
/// pad token, so the final position always holds the newest alarm.
pub fn pad_or_truncate(doc: &PairedDocument, cfg: &SequencerConfig) -> PairedDocument {
    let n = doc.alarm_tokens.len();
    let alarm_tokens = if n >= cfg.target_len {
        doc.alarm_tokens[n - cfg.target_len..].to_vec()
    } else {
        let mut padded = vec![cfg.pad_token.clone(); cfg.target_len - n];
        padded.extend(doc.alarm_tokens.iter().cloned());
        padded
    };
    PairedDocument {
        alarm_tokens,
        ..doc.clone()
    }
}

/// Document indices of each partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub seed: u64,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Documents of a held-back turbine, excluded from the three partitions.
    #[serde(default)]
    pub holdout_turbine: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PairedDocument>,
    pub validation: Vec<PairedDocument>,
    pub test: Vec<PairedDocument>,
}

/// Partition sizes `(train, validation, test)` for `n` documents:
/// `holdout = round(n * holdout_val)`, `validation = floor(holdout * (1 - holdout_test_of_val))`,
/// the test set takes the remainder.
pub fn split_sizes(n: usize, cfg: &SequencerConfig) -> (usize, usize, usize) {
    let holdout = ((n as f64) * cfg.holdout_val).round() as usize;
    let holdout = holdout.min(n);
    let validation = ((holdout as f64) * (1.0 - cfg.holdout_test_of_val)).floor() as usize;
    (n - holdout, validation, holdout - validation)
}

/// Seeded shuffle of `0..n` cut into train/validation/test index lists.
pub fn split_indices(n: usize, cfg: &SequencerConfig) -> Result<SplitIndices> {
    cfg.validate()?;
    if n == 0 {
        return Err(SequenceError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(n, cfg);
    Ok(SplitIndices {
        seed: cfg.seed,
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
        holdout_turbine: Vec::new(),
    })
}

pub fn split_dataset(docs: &[PairedDocument], cfg: &SequencerConfig) -> Result<DatasetSplit> {
    let idx = split_indices(docs.len(), cfg)?;
    idx.materialize(docs)
}

impl SplitIndices {
    /// Like [`split_indices`], but every document of `turbine` goes to
    /// `holdout_turbine` instead of the random partitions.
    pub fn with_holdout_turbine(docs: &[PairedDocument], turbine: u32, cfg: &SequencerConfig) -> Result<Self> {
        let (held, pool): (Vec<usize>, Vec<usize>) =
            (0..docs.len()).partition(|&i| docs[i].turbine_id == turbine);
        let inner = split_indices(pool.len(), cfg)?;
        Ok(Self {
            seed: cfg.seed,
            train: inner.train.iter().map(|&i| pool[i]).collect(),
            validation: inner.validation.iter().map(|&i| pool[i]).collect(),
            test: inner.test.iter().map(|&i| pool[i]).collect(),
            holdout_turbine: held,
        })
    }

    pub fn materialize(&self, docs: &[PairedDocument]) -> Result<DatasetSplit> {
        let pick = |ids: &[usize]| -> Result<Vec<PairedDocument>> {
            ids.iter()
                .map(|&i| docs.get(i).cloned().ok_or(SequenceError::IndexOutOfRange(i)))
                .collect()
        };
        Ok(DatasetSplit {
            train: pick(&self.train)?,
            validation: pick(&self.validation)?,
            test: pick(&self.test)?,
        })
    }

    pub fn holdout_docs(&self, docs: &[PairedDocument]) -> Result<Vec<PairedDocument>> {
        self.holdout_turbine
            .iter()
            .map(|&i| docs.get(i).cloned().ok_or(SequenceError::IndexOutOfRange(i)))
            .collect()
    }

    /// True when every index appears at most once across all partitions.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .chain(&self.holdout_turbine)
            .all(|i| seen.insert(*i))
    }
}

/// Writes one JSON document per line.
pub fn write_jsonl(path: &Path, docs: &[PairedDocument]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, d).map_err(|source| SequenceError::Json { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PairedDocument>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        docs.push(serde_json::from_str(&line).map_err(|source| SequenceError::Json { line: i + 1, source })?);
    }
    Ok(docs)
}
