//! `alarm2action`: cleaning, sequencing, training, evaluation, Markov
//! hints, synthetic corpora and the recommendation service.

use std::path::{Path, PathBuf};

use alarm2action::ingest::{clean_fleet, write_log, CleaningConfig};
use alarm2action::markov::{fit_transitions, TransitionModel};
use alarm2action::rnn::{ModelConfig, ModelParams};
use alarm2action::sequencer::{
    build_fleet_pairs, pad_or_truncate, read_jsonl, split_indices, write_jsonl, SequencerConfig, SplitIndices,
};
use alarm2action::synth::{generate_corpus, verify_corpus, write_corpus, ScenarioSpec};
use alarm2action::trainer::{
    evaluate_with, predict_topk, save_model, train_from, write_history_csv, Checkpoint, CheckpointMeta, TrainConfig,
    UnknownLabelPolicy,
};
use alarm2action::vocab::{build_vocab, init_embedding, EmbeddingInit, EmbeddingMode, PAD_TOKEN};
use alarm2action::PairedDocument;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "alarm2action", version, about = "Repair-action recommendation from turbine alarm logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean raw alarm and response CSV logs.
    Ingest(IngestArgs),
    /// Pair responses with preceding alarms and split the documents.
    Sequence(SequenceArgs),
    /// Train an LSTM or BiLSTM classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one partition.
    Eval(EvalArgs),
    /// Rank repair actions for an alarm sequence.
    Predict(PredictArgs),
    /// First-order Markov chain over alarm texts.
    #[command(subcommand)]
    Markov(MarkovCommand),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Run the HTTP recommendation service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct CleaningArgs {
    /// Window in seconds for chattering suppression.
    #[arg(long, default_value_t = 60)]
    chatter_window: u64,
    /// Responses seen fewer times than this across the fleet are dropped.
    #[arg(long, default_value_t = 2)]
    min_response_count: usize,
}

impl CleaningArgs {
    fn config(&self) -> CleaningConfig {
        CleaningConfig {
            chatter_window_s: self.chatter_window,
            min_response_count: self.min_response_count,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Directory of `alarms_T<k>.csv` files.
    #[arg(long)]
    alarms: PathBuf,
    /// Directory of `responses_T<k>.csv` files.
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cleaning: CleaningArgs,
}

#[derive(Args)]
struct SequenceArgs {
    /// Directory holding both alarm and response logs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for `dataset.jsonl` and `split.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Association window in days.
    #[arg(long, default_value_t = 20)]
    mem: u32,
    #[arg(long, default_value_t = 75)]
    target_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every document of this turbine out of the three partitions.
    #[arg(long)]
    holdout_turbine: Option<u32>,
    #[command(flatten)]
    cleaning: CleaningArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    bidirectional: bool,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Global gradient-norm threshold.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    embed_dim: usize,
    #[arg(long, default_value_t = 300)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 75)]
    seq_len: usize,
    /// Pretrained vectors, one `token v1 v2 ...` line each.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Log a progress line every this many batches.
    #[arg(long, default_value_t = 0)]
    progress_every: usize,
    /// Last-epoch checkpoint; the best-validation one is written next to it
    /// with a `.best.ckpt` suffix.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Partition {
    Train,
    Validation,
    Test,
    /// Documents of the turbine held out by `sequence --holdout-turbine`.
    HoldoutTurbine,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "dataset.jsonl")]
    data: PathBuf,
    #[arg(long, default_value = "split.json")]
    split: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
    /// Full JSON report with confusion matrix and per-class metrics.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Leave out documents whose label never occurred in training instead
    /// of counting them as misses.
    #[arg(long)]
    drop_unknown: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Alarm texts, oldest first.
    #[arg(long = "alarm", required = true)]
    alarms: Vec<String>,
    #[arg(short, long, default_value_t = 3)]
    k: usize,
    /// Adds next-alarm hints from this Markov model.
    #[arg(long)]
    markov: Option<PathBuf>,
}

#[derive(Subcommand)]
enum MarkovCommand {
    /// Fit transition probabilities on document alarm sequences.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Restrict fitting to the training partition of this split.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Additive smoothing.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value = "markov.json")]
        out: PathBuf,
    },
    /// Most probable next alarms after `state`.
    Next {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        state: String,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
    },
    /// Log-probability of an alarm sequence.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "alarm", required = true)]
        alarms: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Learnable,
    Ambiguous,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario as JSON; overrides the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "learnable")]
    preset: Preset,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    turbines: u32,
    #[arg(long, default_value_t = 365)]
    days: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML configuration; `A2A_*` environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn print(value: serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let fleet = clean_fleet(&a.alarms, &a.responses, &a.cleaning.config())?;
    std::fs::create_dir_all(&a.out)?;
    for (id, events) in &fleet.alarms {
        write_log(&a.out.join(format!("alarms_T{id}.csv")), events)?;
    }
    for (id, events) in &fleet.responses {
        write_log(&a.out.join(format!("responses_T{id}.csv")), events)?;
    }
    write_json(&a.out.join("cleaning_report.json"), &fleet.report)?;
    print(json!({
        "turbines": fleet.report.turbines.len(),
        "alarms_kept": fleet.alarms.values().map(Vec::len).sum::<usize>(),
        "responses_kept": fleet.responses.values().map(Vec::len).sum::<usize>(),
        "dropped_labels": fleet.report.dropped_labels,
    }))
}

fn sequence(a: SequenceArgs) -> Result<()> {
    let cfg = SequencerConfig {
        mem_days: a.mem,
        target_len: a.target_len,
        seed: a.seed,
        ..Default::default()
    };
    cfg.validate()?;
    let fleet = clean_fleet(&a.input, &a.input, &a.cleaning.config())?;
    let pairing = build_fleet_pairs(&fleet.alarms, &fleet.responses, &cfg);
    let docs: Vec<PairedDocument> = pairing.documents.iter().map(|d| pad_or_truncate(d, &cfg)).collect();
    let idx = match a.holdout_turbine {
        Some(t) => SplitIndices::with_holdout_turbine(&docs, t, &cfg)?,
        None => split_indices(docs.len(), &cfg)?,
    };
    std::fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join("dataset.jsonl"), &docs)?;
    write_json(&a.out.join("split.json"), &idx)?;
    print(json!({
        "documents": docs.len(),
        "skipped_responses": pairing.skipped_responses,
        "train": idx.train.len(),
        "validation": idx.validation.len(),
        "test": idx.test.len(),
        "holdout_turbine": idx.holdout_turbine.len(),
    }))
}

fn load_docs(data: &Path, split: &Path) -> Result<(Vec<PairedDocument>, SplitIndices)> {
    let docs = read_jsonl(data).with_context(|| format!("cannot load {}", data.display()))?;
    let idx: SplitIndices = read_json(split)?;
    Ok((docs, idx))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (docs, idx) = load_docs(&a.data, &a.split)?;
    let split = idx.materialize(&docs)?;
    let vocab = build_vocab(&split.train)?;
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: a.embed_dim,
        hidden_dim: a.hidden_dim,
        num_classes: vocab.num_labels(),
        bidirectional: a.bidirectional,
        seq_len: a.seq_len,
    };
    mcfg.validate()?;
    let tcfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        clip_threshold: a.clip,
        batch_size: a.batch_size,
        seed: a.seed,
        progress_every: a.progress_every,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let params = match &a.embeddings {
        Some(file) => {
            let init = EmbeddingInit {
                dim: a.embed_dim,
                mode: EmbeddingMode::FromFile,
                file: Some(file.clone()),
            };
            let emb = init_embedding(&init, &vocab, &mut rng)?;
            ModelParams::init_with_embedding(&mcfg, emb, &mut rng)
        }
        None => ModelParams::init(&mcfg, &mut rng),
    };
    let out = train_from(&split, &vocab, &mcfg, &tcfg, params)?;
    let last = out.history.last().cloned();
    save_model(
        &a.out,
        &Checkpoint {
            config: mcfg.clone(),
            params: out.params,
            adam: Some(out.adam),
            vocab: vocab.clone(),
            meta: CheckpointMeta {
                kind: "final".into(),
                epoch: tcfg.epochs,
                val_acc: last.as_ref().and_then(|s| s.val_acc),
                seed: tcfg.seed,
            },
        },
    )?;
    let best_path = a.out.with_extension("best.ckpt");
    if let Some(best) = &out.best {
        save_model(
            &best_path,
            &Checkpoint {
                config: mcfg,
                params: best.params.clone(),
                adam: None,
                vocab,
                meta: CheckpointMeta {
                    kind: "best".into(),
                    epoch: best.epoch,
                    val_acc: Some(best.val_acc),
                    seed: tcfg.seed,
                },
            },
        )?;
    }
    let history = a.history.unwrap_or_else(|| sibling(&a.out, ".history.csv"));
    write_history_csv(&history, &out.history)?;
    print(json!({
        "final": { "path": a.out, "epoch": tcfg.epochs, "train_acc": last.as_ref().map(|s| s.train_acc),
                   "val_acc": last.as_ref().and_then(|s| s.val_acc) },
        "best": out.best.as_ref().map(|b| json!({ "path": best_path, "epoch": b.epoch, "val_acc": b.val_acc })),
        "history": history,
        "pipeline_hash": out.pipeline_hash,
    }))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let (docs, idx) = load_docs(&a.data, &a.split)?;
    let part = match a.partition {
        Partition::HoldoutTurbine => idx.holdout_docs(&docs)?,
        p => {
            let split = idx.materialize(&docs)?;
            match p {
                Partition::Train => split.train,
                Partition::Validation => split.validation,
                _ => split.test,
            }
        }
    };
    let policy = if a.drop_unknown {
        UnknownLabelPolicy::Drop
    } else {
        UnknownLabelPolicy::CountAsMiss
    };
    let report = evaluate_with(&ckpt.params, &ckpt.config, &part, &ckpt.vocab, policy)?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    print(json!({
        "documents": part.len(),
        "evaluated": report.evaluated,
        "correct": report.correct,
        "accuracy": report.accuracy,
        "unknown_label": report.unknown_label,
        "dropped": report.dropped,
    }))
}

fn predict(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let ranked = predict_topk(&ckpt.params, &ckpt.config, &a.alarms, &ckpt.vocab, a.k)?;
    let ranked: Vec<_> = ranked.into_iter().map(|(label, prob)| json!({ "label": label, "prob": prob })).collect();
    let next = match &a.markov {
        Some(path) => {
            let m: TransitionModel = read_json(path)?;
            let last = a.alarms.last().map(String::as_str).unwrap_or_default();
            // An alarm the chain never saw gets no hint rather than an error.
            m.predict_next(last, a.k)
                .map(|v| v.into_iter().map(|(alarm, prob)| json!({ "alarm": alarm, "prob": prob })).collect())
                .unwrap_or_default()
        }
        None => Vec::new(),
    };
    print(json!({ "ranked": ranked, "markov_next": next }))
}

fn markov(cmd: MarkovCommand) -> Result<()> {
    match cmd {
        MarkovCommand::Fit { data, split, alpha, out } => {
            let docs = read_jsonl(&data).with_context(|| format!("cannot load {}", data.display()))?;
            let docs = match split {
                Some(s) => read_json::<SplitIndices>(&s)?.materialize(&docs)?.train,
                None => docs,
            };
            let seqs: Vec<Vec<&str>> = docs
                .iter()
                .map(|d| d.alarm_tokens.iter().map(String::as_str).filter(|t| *t != PAD_TOKEN).collect())
                .collect();
            let m = fit_transitions(&seqs, alpha)?;
            write_json(&out, &m)?;
            print(json!({ "states": m.states().len(), "sequences": seqs.len(), "alpha": alpha, "out": out }))
        }
        MarkovCommand::Next { model, state, k } => {
            let m: TransitionModel = read_json(&model)?;
            let next: Vec<_> = m
                .predict_next(&state, k)?
                .into_iter()
                .map(|(alarm, prob)| json!({ "alarm": alarm, "prob": prob }))
                .collect();
            print(json!(next))
        }
        MarkovCommand::Score { model, alarms } => {
            let m: TransitionModel = read_json(&model)?;
            let lp = m.sequence_logprob(&alarms)?;
            // JSON has no infinity; an impossible transition is reported as null.
            print(json!({ "logprob": lp.is_finite().then_some(lp), "impossible": lp == f64::NEG_INFINITY }))
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => read_json::<ScenarioSpec>(path)?,
        None => match a.preset {
            Preset::Learnable => ScenarioSpec::learnable(a.classes, a.turbines, a.days, a.seed),
            Preset::Ambiguous => ScenarioSpec::ambiguous(a.classes, a.turbines, a.days, a.seed),
        },
    };
    let corpus = generate_corpus(&spec)?;
    let problems = verify_corpus(&corpus, spec.mem_days);
    if !problems.is_empty() {
        bail!("generated corpus failed verification: {}", problems.join("; "));
    }
    write_corpus(&a.out, &corpus)?;
    write_json(&a.out.join("scenario.json"), &spec)?;
    print(json!({
        "out": a.out,
        "faults": corpus.ground_truth.len(),
        "alarms": corpus.alarms.values().map(Vec::len).sum::<usize>(),
        "responses": corpus.responses.values().map(Vec::len).sum::<usize>(),
    }))
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = alarm2action_service::ServiceConfig::from_process_env(a.config.as_deref())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(alarm2action_service::serve(cfg))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Sequence(a) => sequence(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Markov(c) => markov(c),
        Command::Synth(a) => synth(a),
        Command::Serve(a) => serve(a),
    }
}
