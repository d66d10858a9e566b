//! Token and label vocabularies.
//!
//! A token is one normalized alarm text; each alarm therefore maps to one
//! embedding row. Index 0 is the padding token and index 1 stands for any
//! alarm not seen during training.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rnn::Matrix;
use crate::sequencer::PairedDocument;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Half-width of the uniform range used for randomly initialized embeddings.
pub const EMBEDDING_INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("no training documents to build a vocabulary from")]
    EmptyCorpus,
    #[error("label `{0}` is not in the vocabulary")]
    UnknownLabel(String),
    #[error("embedding file line {0} does not have the expected number of values")]
    DimensionMismatch(usize),
    #[error("embedding file line {0} holds a value that is not a number")]
    BadNumber(usize),
    #[error("embedding mode `from_file` needs a file path")]
    MissingEmbeddingFile,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VocabError>;

/// Splits cleaned text on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Key under which a multi-word token is looked up in an embedding file
/// (`gearbox oil temp high` -> `gearbox_oil_temp_high`).
pub fn phrase_key(token: &str) -> String {
    tokenize(token).join("_")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_index: HashMap<String, usize>,
    labels: Vec<String>,
    label_index: HashMap<String, usize>,
    dim: Option<usize>,
}

/// On-disk form of `vocab.json`.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        let mut v = Vocabulary::from_parts(f.tokens, f.labels);
        v.dim = f.dim;
        v
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens,
            labels: v.labels,
            dim: v.dim,
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.labels == other.labels
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, labels: Vec<String>) -> Self {
        let token_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let label_index = labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            tokens,
            token_index,
            labels,
            label_index,
            dim: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    /// Index of `token`, or the unknown index.
    pub fn token_id(&self, token: &str) -> usize {
        self.token_index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.token_index.contains_key(token)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// SHA-256 over the token and label lists; checkpoints record it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        h.update(b"|labels|");
        for l in &self.labels {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Builds the vocabulary from training documents only. Tokens are ordered
/// by first appearance, labels are sorted.
pub fn build_vocab(docs: &[PairedDocument]) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(VocabError::EmptyCorpus);
    }
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    let mut seen: std::collections::HashSet<&str> = [PAD_TOKEN, UNK_TOKEN].into_iter().collect();
    for d in docs {
        for t in &d.alarm_tokens {
            if seen.insert(t.as_str()) {
                tokens.push(t.clone());
            }
        }
    }
    let labels: BTreeSet<&str> = docs.iter().map(|d| d.label.as_str()).collect();
    Ok(Vocabulary::from_parts(
        tokens,
        labels.into_iter().map(str::to_string).collect(),
    ))
}

/// Token ids of a padded document and the index of its label.
pub fn encode_document(doc: &PairedDocument, v: &Vocabulary) -> Result<(Vec<usize>, usize)> {
    let label = v
        .label_id(&doc.label)
        .ok_or_else(|| VocabError::UnknownLabel(doc.label.clone()))?;
    Ok((v.encode_tokens(&doc.alarm_tokens), label))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Random,
    FromFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingInit {
    pub dim: usize,
    pub mode: EmbeddingMode,
    pub file: Option<PathBuf>,
}

impl Default for EmbeddingInit {
    fn default() -> Self {
        Self {
            dim: 300,
            mode: EmbeddingMode::Random,
            file: None,
        }
    }
}

/// Uniform(-0.05, 0.05) rows with a zero padding row.
pub fn random_embedding<R: Rng>(vocab_size: usize, dim: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::uniform(vocab_size, dim, EMBEDDING_INIT_RANGE, rng);
    if vocab_size > PAD_INDEX {
        m.row_mut(PAD_INDEX).fill(0.0);
    }
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmbeddingCoverage {
    pub copied: usize,
    pub random: usize,
}

/// Reads `token f1 ... fdim` lines. Rows of vocabulary tokens found in the
/// file are copied, every other row stays random and the padding row is zero.
pub fn load_embedding_file<R: Rng>(
    path: &Path,
    v: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<(Matrix, EmbeddingCoverage)> {
    let mut m = random_embedding(v.len(), dim, rng);
    let by_key: HashMap<String, usize> = v
        .tokens()
        .iter()
        .enumerate()
        .skip(UNK_INDEX + 1)
        .map(|(i, t)| (phrase_key(t), i))
        .collect();
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut filled = vec![false; v.len()];
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let mut fields = line.split_whitespace();
        let Some(key) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            // word2vec text files may open with a `<count> <dim>` header.
            if line_no == 1 && values.len() == 1 && key.parse::<usize>().is_ok() {
                continue;
            }
            return Err(VocabError::DimensionMismatch(line_no));
        }
        if let Some(&row) = by_key.get(key) {
            for (dst, raw) in m.row_mut(row).iter_mut().zip(values) {
                *dst = raw.parse().map_err(|_| VocabError::BadNumber(line_no))?;
            }
            filled[row] = true;
        }
    }
    let copied = filled.iter().filter(|f| **f).count();
    if copied == 0 {
        tracing::warn!(path = %path.display(), "embedding file covers no vocabulary token; using random rows");
    }
    Ok((
        m,
        EmbeddingCoverage {
            copied,
            random: v.len() - 1 - copied,
        },
    ))
}

/// Builds the initial embedding matrix according to `init`.
pub fn init_embedding<R: Rng>(init: &EmbeddingInit, v: &Vocabulary, rng: &mut R) -> Result<Matrix> {
    match init.mode {
        EmbeddingMode::Random => Ok(random_embedding(v.len(), init.dim, rng)),
        EmbeddingMode::FromFile => {
            let path = init.file.as_deref().ok_or(VocabError::MissingEmbeddingFile)?;
            Ok(load_embedding_file(path, v, init.dim, rng)?.0)
        }
    }
}
