//! Synthetic alarm/response corpora with known ground truth.
//!
//! Each turbine runs a sequence of faults. A fault fires its alarm cascade
//! (exponential inter-arrival delays per template), optionally escalates into
//! an alarm flood (at least 10 alarms inside 10 minutes), and is closed by a
//! repair response inside the `mem` window. Chattering repeats and false
//! alarms are layered on top.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{clean_events, write_log, AlarmEvent, CleaningConfig, IngestError, ResponseEvent};
use crate::sequencer::{build_fleet_pairs, PairedDocument, SequencerConfig};

/// Flood definition: this many alarms ...
pub const FLOOD_MIN_ALARMS: usize = 10;
/// ... within this many seconds.
pub const FLOOD_WINDOW_S: i64 = 600;
/// Flood alarms are placed inside this span so they stay clear of the window edge.
const FLOOD_SPREAD_S: f64 = 540.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmTemplate {
    pub text: String,
    /// Mean delay after the previous cascade alarm, in seconds.
    pub mean_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultType {
    pub name: String,
    pub repair_label: String,
    pub cascade: Vec<AlarmTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub fault_types: Vec<FaultType>,
    pub n_turbines: u32,
    pub days: u32,
    /// Expected faults per turbine per 30 days.
    pub fault_rate: f64,
    pub chatter_prob: f64,
    /// False alarms per turbine per day.
    pub false_alarm_rate: f64,
    pub flood_prob: f64,
    /// Fraction of fault types paired up to share a common cascade suffix.
    pub label_ambiguity: f64,
    pub shared_suffix_len: usize,
    pub seed: u64,
    pub start: DateTime<Utc>,
    /// Mean delay between the last cascade alarm and the repair response.
    pub response_delay_mean_s: f64,
    /// Responses are kept within this many days of their cascade start.
    pub mem_days: u32,
    pub false_alarm_texts: Vec<String>,
    pub flood_alarm_texts: Vec<String>,
}

fn default_false_alarms() -> Vec<String> {
    [
        "anemometer signal lost",
        "nacelle door open",
        "ups battery test",
        "scada comm timeout",
        "ambient temp sensor fault",
        "tower light fault",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_flood_alarms() -> Vec<String> {
    [
        "grid voltage low",
        "grid frequency deviation",
        "converter dc link overvoltage",
        "main breaker trip",
        "aux supply fault",
        "hydraulic pressure low",
        "yaw motor overload",
        "pitch battery low",
        "safety chain open",
        "emergency stop active",
        "rotor speed deviation",
        "generator speed sensor fault",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            fault_types: Vec::new(),
            n_turbines: 10,
            days: 365,
            fault_rate: 2.0,
            chatter_prob: 0.1,
            false_alarm_rate: 0.2,
            flood_prob: 0.1,
            label_ambiguity: 0.0,
            shared_suffix_len: 4,
            seed: 0,
            start: Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap(),
            response_delay_mean_s: 6.0 * 3600.0,
            mem_days: 20,
            false_alarm_texts: default_false_alarms(),
            flood_alarm_texts: default_flood_alarms(),
        }
    }
}

const COMPONENTS: [&str; 12] = [
    "pitch", "yaw", "gearbox", "generator", "converter", "hydraulic", "brake", "transformer", "cooling",
    "main bearing", "blade", "slip ring",
];
const SYMPTOMS: [&str; 6] = [
    "temp high",
    "pressure low",
    "overcurrent",
    "vibration high",
    "position error",
    "comm error",
];
const REPAIRS: [&str; 12] = [
    "replace pitch encoder",
    "reset yaw drive",
    "change gearbox oil filter",
    "replace generator brush",
    "replace converter igbt",
    "refill hydraulic unit",
    "adjust brake pads",
    "inspect transformer",
    "clean cooling fan",
    "grease main bearing",
    "repair blade sensor",
    "replace slip ring",
];

/// Fault type `k`: a cascade of `len` alarms on one component.
fn component_fault(k: usize, len: usize, mean_delay_s: f64) -> FaultType {
    let comp = COMPONENTS[k % COMPONENTS.len()];
    let round = k / COMPONENTS.len();
    let label = if round == 0 {
        REPAIRS[k % REPAIRS.len()].to_string()
    } else {
        format!("{} variant {round}", REPAIRS[k % REPAIRS.len()])
    };
    FaultType {
        name: format!("fault {k}"),
        repair_label: label,
        cascade: (0..len)
            .map(|j| AlarmTemplate {
                text: if round == 0 {
                    format!("{comp} {}", SYMPTOMS[j % SYMPTOMS.len()])
                } else {
                    format!("{comp} {} {round}", SYMPTOMS[j % SYMPTOMS.len()])
                },
                mean_delay_s,
            })
            .collect(),
    }
}

impl ScenarioSpec {
    /// Bijective fault/cascade corpus: no chatter, no false alarms, no
    /// shared alarms between faults.
    pub fn learnable(n_classes: usize, n_turbines: u32, days: u32, seed: u64) -> Self {
        Self {
            fault_types: (0..n_classes).map(|k| component_fault(k, 4, 900.0)).collect(),
            n_turbines,
            days,
            fault_rate: 3.0,
            chatter_prob: 0.0,
            false_alarm_rate: 0.0,
            flood_prob: 0.0,
            label_ambiguity: 0.0,
            seed,
            ..Default::default()
        }
    }

    /// Faults come in pairs whose cascades end in the same long suffix and
    /// differ only in their opening alarm, with false alarms mixed in.
    pub fn ambiguous(n_classes: usize, n_turbines: u32, days: u32, seed: u64) -> Self {
        Self {
            fault_types: (0..n_classes).map(|k| component_fault(k, 1, 900.0)).collect(),
            label_ambiguity: 1.0,
            shared_suffix_len: 8,
            chatter_prob: 0.0,
            false_alarm_rate: 0.5,
            flood_prob: 0.0,
            ..Self::learnable(n_classes, n_turbines, days, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.fault_types.len() < 2 {
            return bad("need at least 2 fault types");
        }
        for (name, p) in [
            ("chatter_prob", self.chatter_prob),
            ("flood_prob", self.flood_prob),
            ("label_ambiguity", self.label_ambiguity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidSpec(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.fault_rate >= 0.0 && self.false_alarm_rate >= 0.0 && self.response_delay_mean_s > 0.0) {
            return bad("rates must be >= 0 and the response delay > 0");
        }
        if self.n_turbines == 0 || self.days == 0 || self.mem_days == 0 {
            return bad("n_turbines, days and mem_days must be >= 1");
        }
        for f in &self.fault_types {
            if f.cascade.is_empty() {
                return Err(SynthError::InvalidSpec(format!("fault `{}` has an empty cascade", f.name)));
            }
            if f.cascade.iter().any(|t| !(t.mean_delay_s > 0.0)) {
                return Err(SynthError::InvalidSpec(format!("fault `{}` has a non-positive delay", f.name)));
            }
            let mut texts: Vec<&str> = f.cascade.iter().map(|t| t.text.as_str()).collect();
            texts.sort();
            if texts.windows(2).any(|w| w[0] == w[1]) {
                return Err(SynthError::InvalidSpec(format!("fault `{}` repeats an alarm text", f.name)));
            }
        }
        let longest = self.effective_fault_types().iter().map(|f| f.cascade.len()).min().unwrap_or(0);
        if self.flood_prob > 0.0 && longest + self.flood_alarm_texts.len() < FLOOD_MIN_ALARMS {
            return bad("flood_alarm_texts too small to reach the flood threshold");
        }
        if self.false_alarm_rate > 0.0 && self.false_alarm_texts.is_empty() {
            return bad("false_alarm_rate > 0 needs false_alarm_texts");
        }
        Ok(())
    }

    /// Fault types after applying `label_ambiguity`: the first
    /// `floor(label_ambiguity * n / 2)` pairs get a common cascade suffix.
    pub fn effective_fault_types(&self) -> Vec<FaultType> {
        let mut faults = self.fault_types.clone();
        let pairs = ((self.label_ambiguity * faults.len() as f64) / 2.0).floor() as usize;
        for p in 0..pairs {
            for k in [2 * p, 2 * p + 1] {
                let delay = faults[k].cascade.last().map(|t| t.mean_delay_s).unwrap_or(600.0);
                for j in 0..self.shared_suffix_len {
                    faults[k].cascade.push(AlarmTemplate {
                        text: format!("shared sequence {p} step {j}"),
                        mean_delay_s: delay,
                    });
                }
            }
        }
        faults
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub turbine_id: u32,
    pub response_time: DateTime<Utc>,
    pub fault: String,
    pub repair_label: String,
    pub flood: bool,
    pub cascade_start: DateTime<Utc>,
    /// The fault's cascade alarms in firing order.
    pub cascade: Vec<(DateTime<Utc>, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub faults: usize,
    pub cascade_alarms: usize,
    pub chatter_repeats: usize,
    pub false_alarms: usize,
    pub flood_faults: usize,
    pub flood_extra_alarms: usize,
    pub alarms_per_day: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub alarms: BTreeMap<u32, Vec<AlarmEvent>>,
    pub responses: BTreeMap<u32, Vec<ResponseEvent>>,
    pub ground_truth: Vec<GroundTruth>,
    pub stats: CorpusStats,
}

fn whole_seconds(start: DateTime<Utc>, offset_s: f64) -> DateTime<Utc> {
    start + Duration::seconds(offset_s.round() as i64)
}

fn turbine_seed(seed: u64, turbine: u32) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(turbine as u64 + 1)
}

struct TurbineCorpus {
    alarms: Vec<AlarmEvent>,
    responses: Vec<ResponseEvent>,
    truth: Vec<GroundTruth>,
    stats: CorpusStats,
}

fn generate_turbine(spec: &ScenarioSpec, faults: &[FaultType], turbine: u32) -> TurbineCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(turbine_seed(spec.seed, turbine));
    let mut alarms = Vec::new();
    let mut responses = Vec::new();
    let mut truth = Vec::new();
    let mut stats = CorpusStats::default();
    let horizon_s = spec.days as f64 * 86_400.0;
    let mem_s = spec.mem_days as f64 * 86_400.0;
    let response_delay = Exp::new(1.0 / spec.response_delay_mean_s).expect("positive mean");

    let mut clock = 0.0;
    if spec.fault_rate > 0.0 {
        let gap = Exp::new(spec.fault_rate / (30.0 * 86_400.0)).expect("positive rate");
        loop {
            clock += gap.sample(&mut rng);
            if clock >= horizon_s {
                break;
            }
            let fault = &faults[rng.random_range(0..faults.len())];
            let flood = rng.random_bool(spec.flood_prob);
            let n = fault.cascade.len();

            let offsets: Vec<f64> = if flood {
                let mut o: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..FLOOD_SPREAD_S)).collect();
                o.sort_by(f64::total_cmp);
                o[0] = 0.0;
                o
            } else {
                let mut t = 0.0;
                fault
                    .cascade
                    .iter()
                    .enumerate()
                    .map(|(j, tpl)| {
                        if j > 0 {
                            t += Exp::new(1.0 / tpl.mean_delay_s).expect("positive delay").sample(&mut rng);
                        }
                        t
                    })
                    .collect()
            };
            let cascade_start = whole_seconds(spec.start, clock);
            let mut cascade = Vec::with_capacity(n);
            let mut last = cascade_start;
            for (tpl, off) in fault.cascade.iter().zip(&offsets) {
                // Keep cascade order strict even after rounding to seconds.
                let t = whole_seconds(spec.start, clock + off).max(last);
                last = t;
                cascade.push((t, tpl.text.clone()));
            }
            for (t, text) in &cascade {
                alarms.push(AlarmEvent {
                    turbine_id: turbine,
                    time_on: *t,
                    text: text.clone(),
                });
                if spec.chatter_prob > 0.0 && rng.random_bool(spec.chatter_prob) {
                    alarms.push(AlarmEvent {
                        turbine_id: turbine,
                        time_on: *t + Duration::seconds(rng.random_range(1..=59)),
                        text: text.clone(),
                    });
                    stats.chatter_repeats += 1;
                }
            }
            stats.cascade_alarms += n;
            if flood {
                stats.flood_faults += 1;
                let extra = FLOOD_MIN_ALARMS.saturating_sub(n).max(1).min(spec.flood_alarm_texts.len());
                let picks: Vec<&String> = spec.flood_alarm_texts.choose_multiple(&mut rng, extra).collect();
                for text in picks {
                    let off = rng.random_range(0.0..FLOOD_SPREAD_S);
                    alarms.push(AlarmEvent {
                        turbine_id: turbine,
                        time_on: whole_seconds(spec.start, clock + off),
                        text: text.clone(),
                    });
                    stats.flood_extra_alarms += 1;
                }
            }

            let last_alarm = cascade.last().expect("non-empty cascade").0;
            let latest_allowed = cascade_start + Duration::seconds(mem_s as i64 - 1);
            let mut response_time = last_alarm + Duration::seconds(response_delay.sample(&mut rng).round() as i64 + 1);
            if response_time > latest_allowed {
                response_time = latest_allowed.max(last_alarm);
            }
            responses.push(ResponseEvent {
                turbine_id: turbine,
                time_on: response_time,
                text: fault.repair_label.clone(),
            });
            truth.push(GroundTruth {
                turbine_id: turbine,
                response_time,
                fault: fault.name.clone(),
                repair_label: fault.repair_label.clone(),
                flood,
                cascade_start,
                cascade,
            });
            stats.faults += 1;
            clock = (response_time - spec.start).num_seconds() as f64;
        }
    }

    if spec.false_alarm_rate > 0.0 {
        let count = Poisson::new(spec.false_alarm_rate * spec.days as f64)
            .expect("positive rate")
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let text = spec.false_alarm_texts.choose(&mut rng).expect("validated non-empty").clone();
            alarms.push(AlarmEvent {
                turbine_id: turbine,
                time_on: whole_seconds(spec.start, rng.random_range(0.0..horizon_s)),
                text,
            });
        }
        stats.false_alarms = count;
    }

    alarms.sort_by_key(|a| a.time_on);
    TurbineCorpus {
        alarms,
        responses,
        truth,
        stats,
    }
}

/// Deterministic for a given spec (including its seed). Turbines use
/// independent derived seeds.
pub fn generate_corpus(spec: &ScenarioSpec) -> Result<Corpus> {
    spec.validate()?;
    let faults = spec.effective_fault_types();
    let mut corpus = Corpus::default();
    for turbine in 1..=spec.n_turbines {
        let t = generate_turbine(spec, &faults, turbine);
        corpus.alarms.insert(turbine, t.alarms);
        corpus.responses.insert(turbine, t.responses);
        corpus.ground_truth.extend(t.truth);
        let s = &mut corpus.stats;
        s.faults += t.stats.faults;
        s.cascade_alarms += t.stats.cascade_alarms;
        s.chatter_repeats += t.stats.chatter_repeats;
        s.false_alarms += t.stats.false_alarms;
        s.flood_faults += t.stats.flood_faults;
        s.flood_extra_alarms += t.stats.flood_extra_alarms;
    }
    let total: usize = corpus.alarms.values().map(Vec::len).sum();
    corpus.stats.alarms_per_day = total as f64 / (spec.days as f64 * spec.n_turbines as f64);
    Ok(corpus)
}

/// Brute-force check of the generator's guarantees. Returns one message per
/// violation.
pub fn verify_corpus(corpus: &Corpus, mem_days: u32) -> Vec<String> {
    let mut problems = Vec::new();
    let mem = Duration::days(mem_days as i64);
    for gt in &corpus.ground_truth {
        let log = corpus.alarms.get(&gt.turbine_id).map(Vec::as_slice).unwrap_or(&[]);
        for (t, text) in &gt.cascade {
            let present = log.iter().any(|a| a.time_on == *t && &a.text == text);
            let in_window = *t <= gt.response_time && gt.response_time - *t <= mem;
            if !present || !in_window {
                problems.push(format!(
                    "turbine {} response at {}: cascade alarm `{text}` at {t} missing or outside window",
                    gt.turbine_id, gt.response_time
                ));
            }
        }
        let responded = corpus
            .responses
            .get(&gt.turbine_id)
            .is_some_and(|rs| rs.iter().any(|r| r.time_on == gt.response_time && r.text == gt.repair_label));
        if !responded {
            problems.push(format!("turbine {}: ground-truth response at {} not in log", gt.turbine_id, gt.response_time));
        }
        if gt.flood {
            let end = gt.cascade_start + Duration::seconds(FLOOD_WINDOW_S);
            let n = log
                .iter()
                .filter(|a| a.time_on >= gt.cascade_start && a.time_on < end)
                .count();
            if n < FLOOD_MIN_ALARMS {
                problems.push(format!(
                    "turbine {} flood at {} has only {n} alarms in 10 minutes",
                    gt.turbine_id, gt.cascade_start
                ));
            }
        }
    }
    problems
}

impl Corpus {
    /// Cleans the logs and pairs them into documents, exactly as if the
    /// corpus had been written to CSV and ingested.
    pub fn documents(&self, cleaning: &CleaningConfig, seq: &SequencerConfig) -> Result<Vec<PairedDocument>> {
        let fleet = clean_events(&self.alarms, &self.responses, cleaning)?;
        Ok(build_fleet_pairs(&fleet.alarms, &fleet.responses, seq).documents)
    }
}

/// Writes `alarms_T<k>.csv`, `responses_T<k>.csv` and `ground_truth.json`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (id, alarms) in &corpus.alarms {
        write_log(&dir.join(format!("alarms_T{id}.csv")), alarms)?;
    }
    for (id, responses) in &corpus.responses {
        write_log(&dir.join(format!("responses_T{id}.csv")), responses)?;
    }
    std::fs::write(
        dir.join("ground_truth.json"),
        serde_json::to_vec_pretty(&corpus.ground_truth)?,
    )?;
    std::fs::write(dir.join("corpus_stats.json"), serde_json::to_vec_pretty(&corpus.stats)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_memory_documents_match_csv_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&noisy_spec(2)).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let cleaning = CleaningConfig::default();
        let seq = SequencerConfig::default();
        let fleet = crate::ingest::clean_fleet(dir.path(), dir.path(), &cleaning).unwrap();
        let from_disk = build_fleet_pairs(&fleet.alarms, &fleet.responses, &seq).documents;
        let in_memory = corpus.documents(&cleaning, &seq).unwrap();
        assert!(!in_memory.is_empty());
        assert_eq!(from_disk, in_memory);
        let mem = clean_events(&corpus.alarms, &corpus.responses, &cleaning).unwrap();
        assert_eq!(mem.report.turbines, fleet.report.turbines);
    }

    fn noisy_spec(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            fault_types: (0..6).map(|k| component_fault(k, 3, 600.0)).collect(),
            n_turbines: 6,
            days: 400,
            fault_rate: 2.0,
            chatter_prob: 0.3,
            false_alarm_rate: 0.5,
            flood_prob: 0.25,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_corpus(&noisy_spec(4)).unwrap();
        let b = generate_corpus(&noisy_spec(4)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&noisy_spec(5)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_response_has_its_cascade_in_window() {
        for seed in 0..3 {
            let corpus = generate_corpus(&noisy_spec(seed)).unwrap();
            assert!(corpus.stats.faults > 50);
            let problems = verify_corpus(&corpus, 20);
            assert!(problems.is_empty(), "{problems:?}");
        }
    }

    #[test]
    fn full_flood_probability_floods_every_fault() {
        let spec = ScenarioSpec {
            flood_prob: 1.0,
            ..noisy_spec(11)
        };
        let corpus = generate_corpus(&spec).unwrap();
        assert!(corpus.ground_truth.iter().all(|g| g.flood));
        assert_eq!(corpus.stats.flood_faults, corpus.stats.faults);
        assert!(verify_corpus(&corpus, 20).is_empty());
    }

    #[test]
    fn learnable_corpus_is_clean() {
        let spec = ScenarioSpec::learnable(8, 3, 200, 1);
        let corpus = generate_corpus(&spec).unwrap();
        assert_eq!(corpus.stats.chatter_repeats, 0);
        assert_eq!(corpus.stats.false_alarms, 0);
        assert_eq!(corpus.stats.flood_faults, 0);
        // Cascades are pairwise disjoint, so fault <-> cascade is a bijection.
        let faults = spec.effective_fault_types();
        for (i, a) in faults.iter().enumerate() {
            for b in &faults[i + 1..] {
                assert!(a.cascade.iter().all(|t| b.cascade.iter().all(|u| u.text != t.text)));
                assert_ne!(a.repair_label, b.repair_label);
            }
        }
    }

    #[test]
    fn ambiguity_adds_shared_suffixes() {
        let spec = ScenarioSpec::ambiguous(4, 1, 10, 0);
        let faults = spec.effective_fault_types();
        let tail = |f: &FaultType| f.cascade[f.cascade.len() - 8..].to_vec();
        assert_eq!(tail(&faults[0]), tail(&faults[1]));
        assert_eq!(tail(&faults[2]), tail(&faults[3]));
        assert_ne!(faults[0].cascade[0], faults[1].cascade[0]);
        assert_ne!(tail(&faults[0]), tail(&faults[2]));
    }

    #[test]
    fn statistics_within_three_sigma() {
        let spec = noisy_spec(21);
        let corpus = generate_corpus(&spec).unwrap();
        let s = &corpus.stats;
        let within = |observed: usize, mean: f64, var: f64| (observed as f64 - mean).abs() <= 3.0 * var.sqrt();

        let lambda = spec.false_alarm_rate * spec.days as f64 * spec.n_turbines as f64;
        assert!(within(s.false_alarms, lambda, lambda), "false alarms {}", s.false_alarms);

        let n = s.cascade_alarms as f64;
        let p = spec.chatter_prob;
        assert!(within(s.chatter_repeats, n * p, n * p * (1.0 - p)), "chatter {}", s.chatter_repeats);

        let n = s.faults as f64;
        let p = spec.flood_prob;
        assert!(within(s.flood_faults, n * p, n * p * (1.0 - p)), "floods {}", s.flood_faults);

        let total: usize = corpus.alarms.values().map(Vec::len).sum();
        assert_eq!(total, s.cascade_alarms + s.chatter_repeats + s.false_alarms + s.flood_extra_alarms);
    }

    #[test]
    fn invalid_specs_rejected() {
        let ok = noisy_spec(0);
        let one_fault = ScenarioSpec {
            fault_types: ok.fault_types[..1].to_vec(),
            ..ok.clone()
        };
        assert!(matches!(generate_corpus(&one_fault), Err(SynthError::InvalidSpec(_))));
        let bad_prob = ScenarioSpec {
            chatter_prob: 1.5,
            ..ok.clone()
        };
        assert!(matches!(generate_corpus(&bad_prob), Err(SynthError::InvalidSpec(_))));
        let negative = ScenarioSpec {
            false_alarm_rate: -1.0,
            ..ok.clone()
        };
        assert!(matches!(generate_corpus(&negative), Err(SynthError::InvalidSpec(_))));
        let tiny_pool = ScenarioSpec {
            flood_alarm_texts: vec!["x".into()],
            ..ok
        };
        assert!(matches!(generate_corpus(&tiny_pool), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn write_corpus_emits_ingest_format() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&ScenarioSpec::learnable(3, 2, 60, 0)).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let cfg = crate::ingest::CleaningConfig::default();
        let back = crate::ingest::parse_alarm_log(&dir.path().join("alarms_T1.csv"), 1, &cfg).unwrap();
        assert_eq!(back, corpus.alarms[&1]);
        let gt: Vec<GroundTruth> =
            serde_json::from_slice(&std::fs::read(dir.path().join("ground_truth.json")).unwrap()).unwrap();
        assert_eq!(gt, corpus.ground_truth);
    }
}
