//! LSTM / BiLSTM sequence classifier on flat `f64` buffers.
//!
//! Architecture: embedding lookup -> one (Bi)LSTM layer read in output mode
//! "last" -> dense layer -> softmax. Gates are ordered input, forget,
//! cell candidate, output inside every `4 * hidden` block.

mod lstm;
mod model;
mod optim;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{backward, backward_into, forward, loss, ForwardCache, PROB_FLOOR};
pub use optim::{adam_step, clip_gradients, global_norm, AdamState};

/// Half-width of the uniform init range for LSTM and dense weights.
pub const WEIGHT_INIT_RANGE: f64 = 0.08;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RnnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    IndexOutOfVocab { id: usize, vocab_size: usize },
    #[error("label {label} is outside {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("forward cache does not belong to this model")]
    CacheMismatch,
    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = std::result::Result<T, RnnError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(RnnError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, half_width: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-half_width, half_width).expect("finite init range");
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out += self * x`
    pub(crate) fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += self^T * y`
    pub(crate) fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                axpy(yi, row, out);
            }
        }
    }

    /// `self += y ⊗ x`
    pub(crate) fn outer_acc(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if yi != 0.0 {
                axpy(yi, x, row);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub bidirectional: bool,
    pub seq_len: usize,
}

impl ModelConfig {
    /// Defaults of the reference architecture: 300-d embeddings and hidden
    /// state over length-75 documents.
    pub fn new(vocab_size: usize, num_classes: usize, bidirectional: bool) -> Self {
        Self {
            vocab_size,
            embed_dim: 300,
            hidden_dim: 300,
            num_classes,
            bidirectional,
            seq_len: 75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.seq_len == 0 {
            return Err(RnnError::InvalidConfig("all dimensions must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(RnnError::InvalidConfig("num_classes must be >= 2"));
        }
        Ok(())
    }

    /// Width of the feature vector fed to the dense layer.
    pub fn feature_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }
}

/// Weights of one LSTM direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// Input weights, `4H x E`.
    pub w: Matrix,
    /// Recurrent weights, `4H x H`.
    pub u: Matrix,
    /// Gate biases, `4H`.
    pub b: Vec<f64>,
}

impl LstmParams {
    fn zeros(embed: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(4 * hidden, embed),
            u: Matrix::zeros(4 * hidden, hidden),
            b: vec![0.0; 4 * hidden],
        }
    }

    fn init<R: Rng>(embed: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        Self {
            w: Matrix::uniform(4 * hidden, embed, WEIGHT_INIT_RANGE, rng),
            u: Matrix::uniform(4 * hidden, hidden, WEIGHT_INIT_RANGE, rng),
            b,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.cols()
    }
}

/// Every trainable tensor of the classifier. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embedding: Matrix,
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
    /// Dense weights, `num_classes x feature_dim`.
    pub dense_w: Matrix,
    pub dense_b: Vec<f64>,
}

pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            embedding: Matrix::zeros(cfg.vocab_size, cfg.embed_dim),
            forward: LstmParams::zeros(cfg.embed_dim, cfg.hidden_dim),
            backward: cfg
                .bidirectional
                .then(|| LstmParams::zeros(cfg.embed_dim, cfg.hidden_dim)),
            dense_w: Matrix::zeros(cfg.num_classes, cfg.feature_dim()),
            dense_b: vec![0.0; cfg.num_classes],
        }
    }

    /// Random init with a zero padding row in the embedding.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let embedding = crate::vocab::random_embedding(cfg.vocab_size, cfg.embed_dim, rng);
        Self::init_with_embedding(cfg, embedding, rng)
    }

    pub fn init_with_embedding<R: Rng>(cfg: &ModelConfig, embedding: Matrix, rng: &mut R) -> Self {
        let forward = LstmParams::init(cfg.embed_dim, cfg.hidden_dim, rng);
        let backward = cfg
            .bidirectional
            .then(|| LstmParams::init(cfg.embed_dim, cfg.hidden_dim, rng));
        Self {
            embedding,
            forward,
            backward,
            dense_w: Matrix::uniform(cfg.num_classes, cfg.feature_dim(), WEIGHT_INIT_RANGE, rng),
            dense_b: vec![0.0; cfg.num_classes],
        }
    }

    /// Tensor names and shapes in a fixed order.
    pub fn layout(&self) -> Vec<(&'static str, (usize, usize))> {
        let mut out = vec![
            ("embedding", self.embedding.shape()),
            ("forward.w", self.forward.w.shape()),
            ("forward.u", self.forward.u.shape()),
            ("forward.b", (self.forward.b.len(), 1)),
        ];
        if let Some(bw) = &self.backward {
            out.push(("backward.w", bw.w.shape()));
            out.push(("backward.u", bw.u.shape()));
            out.push(("backward.b", (bw.b.len(), 1)));
        }
        out.push(("dense.w", self.dense_w.shape()));
        out.push(("dense.b", (self.dense_b.len(), 1)));
        out
    }

    /// Flat views of every tensor, in [`ModelParams::layout`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.embedding.as_slice(),
            self.forward.w.as_slice(),
            self.forward.u.as_slice(),
            &self.forward.b,
        ];
        if let Some(bw) = &self.backward {
            out.extend([bw.w.as_slice(), bw.u.as_slice(), &bw.b[..]]);
        }
        out.push(self.dense_w.as_slice());
        out.push(&self.dense_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.embedding.as_mut_slice(),
            self.forward.w.as_mut_slice(),
            self.forward.u.as_mut_slice(),
            &mut self.forward.b,
        ];
        if let Some(bw) = &mut self.backward {
            out.push(bw.w.as_mut_slice());
            out.push(bw.u.as_mut_slice());
            out.push(&mut bw.b);
        }
        out.push(self.dense_w.as_mut_slice());
        out.push(&mut self.dense_b);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Zeroes every entry, keeping shapes.
    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(cfg).layout();
        let actual = self.layout();
        if expected != actual {
            return Err(RnnError::ShapeMismatch(format!(
                "parameters {actual:?} do not match config {expected:?}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
