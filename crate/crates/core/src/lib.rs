//! Repair-action recommendation from wind-turbine alarm sequences.
//!
//! The pipeline runs in this order:
//!
//! 1. [`ingest`] parses per-turbine alarm/response CSV logs and cleans them
//!    (text normalization, chattering suppression, infrequent responses).
//! 2. [`sequencer`] pairs every response with the alarms that preceded it
//!    inside the `mem` window, pads documents to a fixed length and splits
//!    the corpus 70/15/15.
//! 3. [`vocab`] maps alarm tokens and response labels to indices.
//! 4. [`rnn`] holds the LSTM/BiLSTM classifier with hand-written
//!    backpropagation through time, gradient clipping and Adam.
//! 5. [`trainer`] runs epochs, evaluation, top-k prediction and checkpoints.
//!
//! [`markov`] is an advisory next-alarm model and [`synth`] produces
//! synthetic corpora with known ground truth.

pub mod ingest;
pub mod markov;
pub mod rnn;
pub mod sequencer;
pub mod synth;
pub mod trainer;
pub mod vocab;

pub use ingest::{AlarmEvent, CleaningConfig, ResponseEvent};
pub use rnn::{AdamState, ModelConfig, ModelParams};
pub use sequencer::{DatasetSplit, PairedDocument, SequencerConfig};
pub use trainer::{EvalReport, TrainConfig};
pub use vocab::Vocabulary;
