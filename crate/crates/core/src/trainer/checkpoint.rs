//! Checkpoint container.
//!
//! Layout: the 8-byte magic `A2ACKPT1`, a little-endian `u64` header
//! length, a JSON header, then every tensor as little-endian `f64` values in
//! row-major order. The header lists tensor names and shapes, the
//! vocabulary the model was trained against and a SHA-256 of the payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, TrainError};
use crate::rnn::{AdamState, ModelConfig, ModelParams};
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"A2ACKPT1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// `final` or `best`.
    pub kind: String,
    pub epoch: usize,
    pub val_acc: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub vocab: Vocabulary,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    vocab_hash: String,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    adam: Option<AdamHeader>,
    payload_len: u64,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn push_tensors(params: &ModelParams, out: &mut Vec<u8>) {
    for t in params.tensors() {
        for x in t {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn fill_tensors(params: &mut ModelParams, payload: &[u8], cursor: &mut usize) -> Result<()> {
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            let bytes = payload
                .get(*cursor..*cursor + 8)
                .ok_or_else(|| TrainError::CorruptCheckpoint("payload too short".into()))?;
            *x = f64::from_le_bytes(bytes.try_into().expect("8 bytes"));
            *cursor += 8;
        }
    }
    Ok(())
}

pub fn save_model(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    ckpt.params.check_shapes(&ckpt.config)?;
    let mut payload = Vec::with_capacity(ckpt.params.num_values() * 8 * 3);
    push_tensors(&ckpt.params, &mut payload);
    if let Some(adam) = &ckpt.adam {
        push_tensors(&adam.m, &mut payload);
        push_tensors(&adam.v, &mut payload);
    }
    let header = Header {
        config: ckpt.config.clone(),
        vocab: ckpt.vocab.clone(),
        vocab_hash: ckpt.vocab.fingerprint(),
        meta: ckpt.meta.clone(),
        tensors: ckpt
            .params
            .layout()
            .into_iter()
            .map(|(name, (rows, cols))| TensorEntry {
                name: name.to_string(),
                rows,
                cols,
            })
            .collect(),
        adam: ckpt.adam.as_ref().map(|a| AdamHeader {
            t: a.t,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }),
        payload_len: payload.len() as u64,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| TrainError::CorruptCheckpoint(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        f.write_all(&payload)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint and refuses it unless it was trained against `vocab`.
pub fn load_model(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    let (expected, found) = (ckpt.vocab.fingerprint(), vocab.fingerprint());
    if expected != found {
        return Err(TrainError::VocabularyHashMismatch { expected, found });
    }
    Ok(ckpt)
}

impl Checkpoint {
    /// Loads a checkpoint together with the vocabulary stored inside it.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| TrainError::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic header"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_bytes = bytes
            .get(16..16usize.saturating_add(header_len))
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| TrainError::CorruptCheckpoint(e.to_string()))?;
        let payload = &bytes[16 + header_len..];
        if payload.len() as u64 != header.payload_len {
            return Err(corrupt("payload length does not match header"));
        }
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }
        if header.vocab.fingerprint() != header.vocab_hash {
            return Err(corrupt("embedded vocabulary does not match its hash"));
        }
        header.config.validate()?;
        let mut params = ModelParams::zeros(&header.config);
        let declared: Vec<(String, (usize, usize))> =
            header.tensors.iter().map(|t| (t.name.clone(), (t.rows, t.cols))).collect();
        let expected: Vec<(String, (usize, usize))> =
            params.layout().into_iter().map(|(n, s)| (n.to_string(), s)).collect();
        if declared != expected {
            return Err(corrupt("tensor layout does not match model config"));
        }
        let mut cursor = 0;
        fill_tensors(&mut params, payload, &mut cursor)?;
        let adam = match header.adam {
            Some(a) => {
                let mut state = AdamState::new(&params);
                state.t = a.t;
                state.beta1 = a.beta1;
                state.beta2 = a.beta2;
                state.eps = a.eps;
                fill_tensors(&mut state.m, payload, &mut cursor)?;
                fill_tensors(&mut state.v, payload, &mut cursor)?;
                Some(state)
            }
            None => None,
        };
        if cursor != payload.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        Ok(Checkpoint {
            config: header.config,
            params,
            adam,
            vocab: header.vocab,
            meta: header.meta,
        })
    }
}
