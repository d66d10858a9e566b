//! Alarm and response log parsing and cleaning.
//!
//! Logs are per-turbine CSV files with the header `time_on,text`. Every text
//! field is normalized by [`clean_text`]; rows whose text is empty after
//! cleaning are dropped. Chattering alarms (same text repeating inside the
//! chatter window) collapse to their earliest occurrence, and responses
//! whose label occurs fewer than `min_response_count` times are removed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header `time_on,text`, found `{0}`")]
    BadHeader(String),
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("file has no data rows")]
    EmptyFile,
    #[error("events are not sorted by time_on (first violation at index {0})")]
    UnsortedInput(usize),
    #[error("invalid cleaning config: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One alarm enunciated by a turbine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub turbine_id: u32,
    pub time_on: DateTime<Utc>,
    pub text: String,
}

/// One repair action recorded against a turbine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub turbine_id: u32,
    pub time_on: DateTime<Utc>,
    pub text: String,
}

/// Shared shape of the two log record types.
pub trait LogRecord: Sized {
    fn new(turbine_id: u32, time_on: DateTime<Utc>, text: String) -> Self;
    fn time_on(&self) -> DateTime<Utc>;
    fn text(&self) -> &str;
}

macro_rules! impl_log_record {
    ($ty:ty) => {
        impl LogRecord for $ty {
            fn new(turbine_id: u32, time_on: DateTime<Utc>, text: String) -> Self {
                Self {
                    turbine_id,
                    time_on,
                    text,
                }
            }
            fn time_on(&self) -> DateTime<Utc> {
                self.time_on
            }
            fn text(&self) -> &str {
                &self.text
            }
        }
    };
}

impl_log_record!(AlarmEvent);
impl_log_record!(ResponseEvent);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    /// Characters stripped from every text field, in addition to punctuation.
    pub noise_chars: Vec<char>,
    pub chatter_window_s: u64,
    pub min_response_count: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            noise_chars: vec!['#', '*', '|', '\t'],
            chatter_window_s: 60,
            min_response_count: 2,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chatter_window_s == 0 {
            return Err(IngestError::InvalidConfig("chatter_window_s must be > 0"));
        }
        if self.min_response_count == 0 {
            return Err(IngestError::InvalidConfig("min_response_count must be >= 1"));
        }
        Ok(())
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Lowercases `raw`, replaces punctuation and noise characters with word
/// breaks and collapses whitespace runs to single spaces.
pub fn clean_text(raw: &str, cfg: &CleaningConfig) -> String {
    let lowered = raw.to_lowercase();
    let separated: String = lowered
        .chars()
        .map(|c| {
            if is_punctuation(c) || cfg.noise_chars.contains(&c) {
                ' '
            } else {
                c
            }
        })
        .collect();
    // A whitespace noise character cannot survive as the word separator.
    let joiner = if cfg.noise_chars.contains(&' ') { "" } else { " " };
    separated.split_whitespace().collect::<Vec<_>>().join(joiner)
}

/// Parses an ISO 8601 / RFC 3339 timestamp. Values without an offset are UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    // Bare dates are midnight UTC; anything shorter is rejected.
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

fn read_log<T: LogRecord>(path: &Path, turbine_id: u32, cfg: &CleaningConfig) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "time_on" || &headers[1] != "text" {
        return Err(IngestError::BadHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = 0usize;
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line_no = i + 2;
        let record = record.map_err(|_| IngestError::MalformedRow(line_no))?;
        rows += 1;
        if record.len() < 2 {
            return Err(IngestError::MalformedRow(line_no));
        }
        let time_on = parse_timestamp(&record[0]).ok_or(IngestError::MalformedRow(line_no))?;
        let text = clean_text(&record[1], cfg);
        if text.is_empty() {
            continue;
        }
        events.push(T::new(turbine_id, time_on, text));
    }
    if rows == 0 {
        return Err(IngestError::EmptyFile);
    }
    events.sort_by_key(|e| e.time_on());
    Ok(events)
}

/// Reads an alarm log. Rows whose cleaned text is empty are dropped.
pub fn parse_alarm_log(path: &Path, turbine_id: u32, cfg: &CleaningConfig) -> Result<Vec<AlarmEvent>> {
    read_log(path, turbine_id, cfg)
}

pub fn parse_response_log(
    path: &Path,
    turbine_id: u32,
    cfg: &CleaningConfig,
) -> Result<Vec<ResponseEvent>> {
    read_log(path, turbine_id, cfg)
}

/// Writes events back out in the `time_on,text` format.
pub fn write_log<T: LogRecord>(path: &Path, events: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["time_on", "text"])?;
    for e in events {
        writer.write_record([e.time_on().to_rfc3339(), e.text().to_string()])?;
    }
    writer.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Drops every alarm that repeats the text of the last *kept* alarm with the
/// same text within `chatter_window_s` seconds.
pub fn remove_chattering(events: &[AlarmEvent], cfg: &CleaningConfig) -> Result<Vec<AlarmEvent>> {
    if let Some(i) = events.windows(2).position(|w| w[1].time_on < w[0].time_on) {
        return Err(IngestError::UnsortedInput(i + 1));
    }
    let window = chrono::Duration::seconds(cfg.chatter_window_s as i64);
    let mut last_kept: HashMap<&str, DateTime<Utc>> = HashMap::new();
    let mut kept = Vec::with_capacity(events.len());
    for e in events {
        let keep = match last_kept.get(e.text.as_str()) {
            Some(prev) => e.time_on - *prev > window,
            None => true,
        };
        if keep {
            last_kept.insert(&e.text, e.time_on);
            kept.push(e.clone());
        }
    }
    Ok(kept)
}

/// Removes responses whose label occurs fewer than `min_response_count` times.
pub fn filter_infrequent_responses(
    events: &[ResponseEvent],
    cfg: &CleaningConfig,
) -> (Vec<ResponseEvent>, BTreeSet<String>) {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for e in events {
        *counts.entry(e.text.as_str()).or_default() += 1;
    }
    let dropped: BTreeSet<String> = counts
        .iter()
        .filter(|(_, &n)| n < cfg.min_response_count)
        .map(|(label, _)| label.to_string())
        .collect();
    let kept = events
        .iter()
        .filter(|e| !dropped.contains(&e.text))
        .cloned()
        .collect();
    (kept, dropped)
}

/// Per-turbine counts of rows removed by each cleaning rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurbineReport {
    pub alarms_read: usize,
    pub alarms_empty_text: usize,
    pub alarms_chattering: usize,
    pub alarms_kept: usize,
    pub responses_read: usize,
    pub responses_empty_text: usize,
    pub responses_infrequent: usize,
    pub responses_kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub config: CleaningConfig,
    pub turbines: BTreeMap<u32, TurbineReport>,
    pub dropped_labels: BTreeSet<String>,
}

/// Cleaned logs of a whole fleet, keyed by turbine id.
#[derive(Debug, Clone, Default)]
pub struct CleanedFleet {
    pub alarms: BTreeMap<u32, Vec<AlarmEvent>>,
    pub responses: BTreeMap<u32, Vec<ResponseEvent>>,
    pub report: CleaningReport,
}

/// Extracts `k` from a file name of the form `<prefix>_T<k>.csv`.
pub fn turbine_id_from_name(name: &str, prefix: &str) -> Option<u32> {
    name.strip_prefix(prefix)?
        .strip_prefix("_T")?
        .strip_suffix(".csv")?
        .parse()
        .ok()
}

fn discover(dir: &Path, prefix: &str) -> Result<BTreeMap<u32, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(|n| turbine_id_from_name(n, prefix)) {
            found.insert(id, entry.path());
        }
    }
    Ok(found)
}

fn count_rows(path: &Path) -> Result<usize> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    Ok(reader.records().count())
}

/// Reads `alarms_T<k>.csv` / `responses_T<k>.csv` files and applies every
/// cleaning rule. Chattering is suppressed per turbine; the infrequent
/// response threshold counts labels across the whole fleet.
pub fn clean_fleet(alarm_dir: &Path, response_dir: &Path, cfg: &CleaningConfig) -> Result<CleanedFleet> {
    cfg.validate()?;
    let alarm_files = discover(alarm_dir, "alarms")?;
    let response_files = discover(response_dir, "responses")?;

    let alarm_results: Vec<(u32, Vec<AlarmEvent>, usize, usize)> = alarm_files
        .par_iter()
        .map(|(&id, path)| {
            let read = count_rows(path)?;
            let parsed = parse_alarm_log(path, id, cfg)?;
            let non_empty = parsed.len();
            let kept = remove_chattering(&parsed, cfg)?;
            Ok((id, kept, read, read - non_empty))
        })
        .collect::<Result<_>>()?;
    let response_results: Vec<(u32, Vec<ResponseEvent>, usize)> = response_files
        .par_iter()
        .map(|(&id, path)| {
            let read = count_rows(path)?;
            Ok((id, parse_response_log(path, id, cfg)?, read))
        })
        .collect::<Result<_>>()?;

    let mut fleet = CleanedFleet::default();
    fleet.report.config = cfg.clone();
    for (id, kept, read, empty) in alarm_results {
        let r = fleet.report.turbines.entry(id).or_default();
        r.alarms_read = read;
        r.alarms_empty_text = empty;
        r.alarms_chattering = read - empty - kept.len();
        r.alarms_kept = kept.len();
        fleet.alarms.insert(id, kept);
    }

    let all_responses: Vec<ResponseEvent> = response_results
        .iter()
        .flat_map(|(_, events, _)| events.iter().cloned())
        .collect();
    let (_, dropped) = filter_infrequent_responses(&all_responses, cfg);
    for (id, events, read) in response_results {
        let r = fleet.report.turbines.entry(id).or_default();
        r.responses_read = read;
        r.responses_empty_text = read - events.len();
        let kept: Vec<ResponseEvent> = events
            .into_iter()
            .filter(|e| !dropped.contains(&e.text))
            .collect();
        r.responses_infrequent = read - r.responses_empty_text - kept.len();
        r.responses_kept = kept.len();
        fleet.responses.insert(id, kept);
    }
    fleet.report.dropped_labels = dropped;
    Ok(fleet)
}

/// In-memory variant of [`clean_fleet`] for logs that were never written to
/// disk. Texts are normalized, empty ones dropped, then the same chattering
/// and infrequent-label rules apply.
pub fn clean_events(
    alarms: &BTreeMap<u32, Vec<AlarmEvent>>,
    responses: &BTreeMap<u32, Vec<ResponseEvent>>,
    cfg: &CleaningConfig,
) -> Result<CleanedFleet> {
    cfg.validate()?;
    let mut fleet = CleanedFleet::default();
    fleet.report.config = cfg.clone();
    for (&id, events) in alarms {
        let mut normalized: Vec<AlarmEvent> = events
            .iter()
            .map(|e| AlarmEvent {
                text: clean_text(&e.text, cfg),
                ..e.clone()
            })
            .filter(|e| !e.text.is_empty())
            .collect();
        normalized.sort_by_key(|e| e.time_on);
        let kept = remove_chattering(&normalized, cfg)?;
        let r = fleet.report.turbines.entry(id).or_default();
        r.alarms_read = events.len();
        r.alarms_empty_text = events.len() - normalized.len();
        r.alarms_chattering = normalized.len() - kept.len();
        r.alarms_kept = kept.len();
        fleet.alarms.insert(id, kept);
    }
    let mut per_turbine: BTreeMap<u32, Vec<ResponseEvent>> = BTreeMap::new();
    for (&id, events) in responses {
        let mut normalized: Vec<ResponseEvent> = events
            .iter()
            .map(|e| ResponseEvent {
                text: clean_text(&e.text, cfg),
                ..e.clone()
            })
            .filter(|e| !e.text.is_empty())
            .collect();
        normalized.sort_by_key(|e| e.time_on);
        let r = fleet.report.turbines.entry(id).or_default();
        r.responses_read = events.len();
        r.responses_empty_text = events.len() - normalized.len();
        per_turbine.insert(id, normalized);
    }
    let all: Vec<ResponseEvent> = per_turbine.values().flatten().cloned().collect();
    let (_, dropped) = filter_infrequent_responses(&all, cfg);
    for (id, events) in per_turbine {
        let before = events.len();
        let kept: Vec<ResponseEvent> = events.into_iter().filter(|e| !dropped.contains(&e.text)).collect();
        let r = fleet.report.turbines.entry(id).or_default();
        r.responses_infrequent = before - kept.len();
        r.responses_kept = kept.len();
        fleet.responses.insert(id, kept);
    }
    fleet.report.dropped_labels = dropped;
    Ok(fleet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use std::io::Write;

    fn at(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_456_826_400 + secs, 0).unwrap()
    }

    fn alarm(text: &str, secs: i64) -> AlarmEvent {
        AlarmEvent {
            turbine_id: 1,
            time_on: at(secs),
            text: text.to_string(),
        }
    }

    fn response(text: &str) -> ResponseEvent {
        ResponseEvent {
            turbine_id: 1,
            time_on: at(0),
            text: text.to_string(),
        }
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn clean_text_examples() {
        let cfg = CleaningConfig::default();
        assert_eq!(clean_text("Gearbox  OIL-Temp HIGH!!", &cfg), "gearbox oil temp high");
        assert_eq!(clean_text("", &cfg), "");
        assert_eq!(clean_text("###", &cfg), "");
        assert_eq!(clean_text("Alarm 3!", &cfg), "alarm 3");
        assert_eq!(clean_text("pitch\tfault", &cfg), "pitch fault");
    }

    #[test]
    fn clean_text_space_noise() {
        let cfg = CleaningConfig {
            noise_chars: vec![' '],
            ..Default::default()
        };
        assert_eq!(clean_text("a b", &cfg), "ab");
    }

    #[test]
    fn parse_sorts_and_normalizes() {
        let f = write_csv(
            "time_on,text\n2016-03-01T10:00:05,Yaw Error\n2016-03-01T10:00:00,Alarm 3!\n2016-03-01T09:00:00,\"Pitch, fault\"\n",
        );
        let events = parse_alarm_log(f.path(), 4, &CleaningConfig::default()).unwrap();
        let texts: Vec<&str> = events.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["pitch fault", "alarm 3", "yaw error"]);
        assert_eq!(events[1].time_on, Utc.with_ymd_and_hms(2016, 3, 1, 10, 0, 0).unwrap());
        assert!(events.iter().all(|e| e.turbine_id == 4));
    }

    #[test]
    fn parse_rejects_bad_date() {
        let f = write_csv("time_on,text\n2016-13-40,alarm\n");
        let err = parse_alarm_log(f.path(), 1, &CleaningConfig::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow(2)), "{err}");
    }

    #[test]
    fn parse_rejects_partial_date() {
        let f = write_csv("time_on,text\n2016-03-01T10:00:00,ok\n2016-03,alarm\n");
        let err = parse_alarm_log(f.path(), 1, &CleaningConfig::default()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow(3)), "{err}");
    }

    #[test]
    fn parse_empty_file() {
        let f = write_csv("time_on,text\n");
        let err = parse_alarm_log(f.path(), 1, &CleaningConfig::default()).unwrap_err();
        assert!(matches!(err, IngestError::EmptyFile));
    }

    #[test]
    fn parse_bad_header() {
        let f = write_csv("when,what\n2016-03-01T10:00:00,x\n");
        let err = parse_alarm_log(f.path(), 1, &CleaningConfig::default()).unwrap_err();
        assert!(matches!(err, IngestError::BadHeader(_)));
    }

    #[test]
    fn timestamps_with_offsets() {
        assert_eq!(parse_timestamp("2016-03-01T11:00:00+01:00"), Some(at(0)));
        assert_eq!(parse_timestamp("2016-03-01T10:00:00Z"), Some(at(0)));
        assert_eq!(parse_timestamp("2016-03-01 10:00:00"), Some(at(0)));
        assert_eq!(parse_timestamp("2016-03-01T10:00"), None);
    }

    #[test]
    fn chattering_examples() {
        let cfg = CleaningConfig::default();
        let out = remove_chattering(&[alarm("alarm 3", 0), alarm("alarm 3", 30)], &cfg).unwrap();
        assert_eq!(out, vec![alarm("alarm 3", 0)]);

        let both = [alarm("alarm 3", 0), alarm("alarm 3", 61)];
        assert_eq!(remove_chattering(&both, &cfg).unwrap(), both.to_vec());

        let run = [alarm("a", 0), alarm("a", 30), alarm("a", 59), alarm("a", 120)];
        assert_eq!(
            remove_chattering(&run, &cfg).unwrap(),
            vec![alarm("a", 0), alarm("a", 120)]
        );
    }

    #[test]
    fn chattering_window_edge_is_suppressed() {
        let cfg = CleaningConfig::default();
        let out = remove_chattering(&[alarm("a", 0), alarm("a", 60)], &cfg).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn chattering_interleaved_texts() {
        let cfg = CleaningConfig::default();
        let input = [alarm("a", 0), alarm("b", 10), alarm("a", 20), alarm("b", 100)];
        let out = remove_chattering(&input, &cfg).unwrap();
        assert_eq!(out, vec![alarm("a", 0), alarm("b", 10), alarm("b", 100)]);
    }

    #[test]
    fn chattering_rejects_unsorted() {
        let err = remove_chattering(&[alarm("a", 10), alarm("a", 0)], &CleaningConfig::default())
            .unwrap_err();
        assert!(matches!(err, IngestError::UnsortedInput(1)));
    }

    #[test]
    fn infrequent_examples() {
        let cfg = CleaningConfig::default();
        let input = vec![response("a"), response("b"), response("a"), response("a")];
        let (kept, dropped) = filter_infrequent_responses(&input, &cfg);
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|e| e.text == "a"));
        assert_eq!(dropped, BTreeSet::from(["b".to_string()]));

        let (kept, dropped) = filter_infrequent_responses(&[response("a"), response("a")], &cfg);
        assert_eq!(kept.len(), 2);
        assert!(dropped.is_empty());

        let (kept, dropped) = filter_infrequent_responses(&[], &cfg);
        assert!(kept.is_empty() && dropped.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(CleaningConfig::default().validate().is_ok());
        let bad = CleaningConfig {
            chatter_window_s: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = CleaningConfig {
            min_response_count: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn turbine_ids_from_names() {
        assert_eq!(turbine_id_from_name("alarms_T12.csv", "alarms"), Some(12));
        assert_eq!(turbine_id_from_name("responses_T3.csv", "responses"), Some(3));
        assert_eq!(turbine_id_from_name("alarms_T3.csv", "responses"), None);
        assert_eq!(turbine_id_from_name("alarms_Tx.csv", "alarms"), None);
    }

    proptest! {
        #[test]
        fn clean_text_is_idempotent(raw in "\\PC{0,40}") {
            let cfg = CleaningConfig::default();
            let once = clean_text(&raw, &cfg);
            prop_assert_eq!(clean_text(&once, &cfg), once.clone());
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' ') && !once.contains("  "));
            prop_assert!(!once.chars().any(|c| cfg.noise_chars.contains(&c) || is_punctuation(c)));
        }

        #[test]
        fn infrequent_filter_is_fixed_point(labels in prop::collection::vec(0u8..6, 0..40)) {
            let cfg = CleaningConfig::default();
            let events: Vec<ResponseEvent> =
                labels.iter().map(|l| response(&format!("r{l}"))).collect();
            let (kept, _) = filter_infrequent_responses(&events, &cfg);
            let (again, dropped) = filter_infrequent_responses(&kept, &cfg);
            prop_assert_eq!(again, kept);
            prop_assert!(dropped.is_empty());
        }

        #[test]
        fn chattering_never_grows_or_reorders(
            mut raw in prop::collection::vec((0i64..2_000, 0u8..4), 0..120)
        ) {
            raw.sort_by_key(|(t, _)| *t);
            let events: Vec<AlarmEvent> =
                raw.iter().map(|(t, k)| alarm(&format!("alarm {k}"), *t)).collect();
            let out = remove_chattering(&events, &CleaningConfig::default()).unwrap();
            prop_assert!(out.len() <= events.len());
            // Output is a subsequence of the input.
            let mut it = events.iter();
            for e in &out {
                prop_assert!(it.any(|x| x == e));
            }
        }
    }
}
