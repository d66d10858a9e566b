#![allow(dead_code)]

use std::sync::Arc;

use alarm2action::ingest::CleaningConfig;
use alarm2action::rnn::ModelConfig;
use alarm2action::sequencer::{split_dataset, SequencerConfig};
use alarm2action::synth::{generate_corpus, Corpus, GroundTruth, ScenarioSpec};
use alarm2action::trainer::{train, Checkpoint, CheckpointMeta, TrainConfig};
use alarm2action::vocab::build_vocab;
use alarm2action_service::types::RawAlarm;
use alarm2action_service::{Engine, EngineConfig, MemoryStore, Store, TrainingBase};

pub struct Fixture {
    pub corpus: Corpus,
    pub base: TrainingBase,
    pub checkpoint: Checkpoint,
}

/// A small, well-trained model on a four-class learnable corpus.
pub fn fixture() -> Fixture {
    let corpus = generate_corpus(&ScenarioSpec::learnable(4, 4, 400, 31)).unwrap();
    let seq = SequencerConfig::default();
    let docs = corpus.documents(&CleaningConfig::default(), &seq).unwrap();
    let split = split_dataset(&docs, &seq).unwrap();
    let vocab = build_vocab(&split.train).unwrap();
    let config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 8,
        hidden_dim: 12,
        num_classes: vocab.num_labels(),
        bidirectional: false,
        seq_len: 16,
    };
    let tcfg = quick_train();
    let out = train(&split, &vocab, &config, &tcfg).unwrap();
    let best = out.best.expect("validation partition present");
    assert!(best.val_acc >= 0.95, "fixture model under-trained: {}", best.val_acc);
    Fixture {
        checkpoint: Checkpoint {
            config,
            params: best.params,
            adam: Some(out.adam),
            vocab,
            meta: CheckpointMeta {
                kind: "best".into(),
                epoch: best.epoch,
                val_acc: Some(best.val_acc),
                seed: tcfg.seed,
            },
        },
        base: TrainingBase {
            train: split.train,
            validation: split.validation,
        },
        corpus,
    }
}

pub fn quick_train() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        lr: 0.02,
        seed: 5,
        ..Default::default()
    }
}

pub fn engine_with(fx: &Fixture, cfg: EngineConfig, store: Arc<dyn Store>) -> Arc<Engine> {
    Engine::new(cfg, store, fx.base.clone(), Some(fx.checkpoint.clone())).unwrap()
}

pub fn engine(fx: &Fixture) -> Arc<Engine> {
    let cfg = EngineConfig {
        train: quick_train(),
        ..Default::default()
    };
    engine_with(fx, cfg, Arc::new(MemoryStore::new()))
}

pub fn cascade_events(gt: &GroundTruth) -> Vec<RawAlarm> {
    gt.cascade
        .iter()
        .map(|(t, text)| RawAlarm {
            time_on: t.to_rfc3339(),
            text: text.clone(),
        })
        .collect()
}

pub fn truth_for(corpus: &Corpus, label: &str) -> Vec<GroundTruth> {
    corpus.ground_truth.iter().filter(|g| g.repair_label == label).cloned().collect()
}
