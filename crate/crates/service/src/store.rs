//! Persistence behind a small trait, with an in-memory and a SQLite backend.

use std::path::Path;
use std::sync::Mutex;

use alarm2action::ingest::AlarmEvent;
use alarm2action::sequencer::PairedDocument;
use chrono::{DateTime, Utc};
use rusqlite::{params, Connection, OptionalExtension};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};
use crate::types::{BufferedExample, FeedbackRecord, Recommendation, RecommendationStatus};

#[derive(Debug, Clone, PartialEq)]
pub enum ResolveOutcome {
    Resolved(Recommendation),
    NotFound,
    AlreadyResolved,
}

pub trait Store: Send + Sync {
    /// Appends alarms in one transaction.
    fn insert_alarms(&self, events: &[AlarmEvent]) -> ServiceResult<()>;
    /// Alarms of `turbine` with `from <= time_on <= to`, oldest first.
    fn alarms_between(&self, turbine: u32, from: DateTime<Utc>, to: DateTime<Utc>) -> ServiceResult<Vec<AlarmEvent>>;
    fn latest_alarm_time(&self, turbine: u32) -> ServiceResult<Option<DateTime<Utc>>>;

    fn insert_recommendation(&self, rec: &Recommendation) -> ServiceResult<()>;
    fn recommendation(&self, id: Uuid) -> ServiceResult<Option<Recommendation>>;
    /// Newest first.
    fn list_recommendations(&self, status: Option<RecommendationStatus>, limit: usize) -> ServiceResult<Vec<Recommendation>>;
    /// Atomically moves a pending recommendation to `status`, records the
    /// feedback and appends `example` to the retraining buffer.
    fn resolve(
        &self,
        fb: &FeedbackRecord,
        status: RecommendationStatus,
        example: Option<&PairedDocument>,
    ) -> ServiceResult<ResolveOutcome>;
    fn feedback_for(&self, id: Uuid) -> ServiceResult<Vec<FeedbackRecord>>;
    /// Statuses of the `n` most recently resolved recommendations, newest first.
    fn recent_outcomes(&self, n: usize) -> ServiceResult<Vec<RecommendationStatus>>;

    fn buffer(&self) -> ServiceResult<Vec<BufferedExample>>;
    /// Moves the given buffer entries into the permanent training additions.
    fn absorb_buffer(&self, ids: &[i64]) -> ServiceResult<usize>;
    fn absorbed(&self) -> ServiceResult<Vec<PairedDocument>>;

    fn model_version(&self) -> ServiceResult<Option<u64>>;
    fn set_model_version(&self, version: u64) -> ServiceResult<()>;
}

#[derive(Default)]
struct MemState {
    alarms: Vec<AlarmEvent>,
    recommendations: Vec<Recommendation>,
    resolution_order: Vec<Uuid>,
    feedback: Vec<FeedbackRecord>,
    buffer: Vec<BufferedExample>,
    next_buffer_id: i64,
    absorbed: Vec<PairedDocument>,
    model_version: Option<u64>,
}

/// Volatile store for tests and throwaway runs.
#[derive(Default)]
pub struct MemoryStore {
    state: Mutex<MemState>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MemState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Store for MemoryStore {
    fn insert_alarms(&self, events: &[AlarmEvent]) -> ServiceResult<()> {
        let mut s = self.lock();
        s.alarms.extend_from_slice(events);
        // Stable: equal timestamps keep insertion order.
        s.alarms.sort_by_key(|a| a.time_on);
        Ok(())
    }

    fn alarms_between(&self, turbine: u32, from: DateTime<Utc>, to: DateTime<Utc>) -> ServiceResult<Vec<AlarmEvent>> {
        Ok(self
            .lock()
            .alarms
            .iter()
            .filter(|a| a.turbine_id == turbine && a.time_on >= from && a.time_on <= to)
            .cloned()
            .collect())
    }

    fn latest_alarm_time(&self, turbine: u32) -> ServiceResult<Option<DateTime<Utc>>> {
        Ok(self.lock().alarms.iter().filter(|a| a.turbine_id == turbine).map(|a| a.time_on).max())
    }

    fn insert_recommendation(&self, rec: &Recommendation) -> ServiceResult<()> {
        self.lock().recommendations.push(rec.clone());
        Ok(())
    }

    fn recommendation(&self, id: Uuid) -> ServiceResult<Option<Recommendation>> {
        Ok(self.lock().recommendations.iter().find(|r| r.id == id).cloned())
    }

    fn list_recommendations(&self, status: Option<RecommendationStatus>, limit: usize) -> ServiceResult<Vec<Recommendation>> {
        Ok(self
            .lock()
            .recommendations
            .iter()
            .rev()
            .filter(|r| status.is_none_or(|s| r.status == s))
            .take(limit)
            .cloned()
            .collect())
    }

    fn resolve(
        &self,
        fb: &FeedbackRecord,
        status: RecommendationStatus,
        example: Option<&PairedDocument>,
    ) -> ServiceResult<ResolveOutcome> {
        let mut s = self.lock();
        let Some(rec) = s.recommendations.iter_mut().find(|r| r.id == fb.recommendation_id) else {
            return Ok(ResolveOutcome::NotFound);
        };
        if rec.status != RecommendationStatus::Pending {
            return Ok(ResolveOutcome::AlreadyResolved);
        }
        rec.status = status;
        rec.resolved_at = Some(fb.at);
        let updated = rec.clone();
        s.resolution_order.push(fb.recommendation_id);
        s.feedback.push(fb.clone());
        if let Some(doc) = example {
            s.next_buffer_id += 1;
            let id = s.next_buffer_id;
            s.buffer.push(BufferedExample {
                id,
                recommendation_id: fb.recommendation_id,
                doc: doc.clone(),
            });
        }
        Ok(ResolveOutcome::Resolved(updated))
    }

    fn feedback_for(&self, id: Uuid) -> ServiceResult<Vec<FeedbackRecord>> {
        Ok(self.lock().feedback.iter().filter(|f| f.recommendation_id == id).cloned().collect())
    }

    fn recent_outcomes(&self, n: usize) -> ServiceResult<Vec<RecommendationStatus>> {
        let s = self.lock();
        Ok(s.resolution_order
            .iter()
            .rev()
            .take(n)
            .filter_map(|id| s.recommendations.iter().find(|r| r.id == *id).map(|r| r.status))
            .collect())
    }

    fn buffer(&self) -> ServiceResult<Vec<BufferedExample>> {
        Ok(self.lock().buffer.clone())
    }

    fn absorb_buffer(&self, ids: &[i64]) -> ServiceResult<usize> {
        let mut s = self.lock();
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut s.buffer).into_iter().partition(|b| ids.contains(&b.id));
        s.buffer = kept;
        let n = taken.len();
        s.absorbed.extend(taken.into_iter().map(|b| b.doc));
        Ok(n)
    }

    fn absorbed(&self) -> ServiceResult<Vec<PairedDocument>> {
        Ok(self.lock().absorbed.clone())
    }

    fn model_version(&self) -> ServiceResult<Option<u64>> {
        Ok(self.lock().model_version)
    }

    fn set_model_version(&self, version: u64) -> ServiceResult<()> {
        self.lock().model_version = Some(version);
        Ok(())
    }
}

/// SQLite-backed store. Every mutation runs in its own transaction.
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS alarms (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    turbine_id INTEGER NOT NULL,
    time_ns INTEGER NOT NULL,
    text TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS alarms_by_time ON alarms (turbine_id, time_ns);
CREATE TABLE IF NOT EXISTS recommendations (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    id TEXT NOT NULL UNIQUE,
    status TEXT NOT NULL,
    resolved_seq INTEGER,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS feedback (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    recommendation_id TEXT NOT NULL,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS buffer (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    recommendation_id TEXT NOT NULL,
    doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS absorbed (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
";

fn to_ns(t: DateTime<Utc>) -> ServiceResult<i64> {
    t.timestamp_nanos_opt()
        .ok_or_else(|| ServiceError::Validation(format!("timestamp {t} out of storable range")))
}

fn from_ns(ns: i64) -> DateTime<Utc> {
    DateTime::from_timestamp_nanos(ns)
}

impl SqliteStore {
    pub fn open(path: &Path) -> ServiceResult<Self> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> ServiceResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> ServiceResult<Self> {
        conn.pragma_update(None, "journal_mode", "WAL").ok();
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn parse_rec(body: String) -> ServiceResult<Recommendation> {
    Ok(serde_json::from_str(&body)?)
}

impl Store for SqliteStore {
    fn insert_alarms(&self, events: &[AlarmEvent]) -> ServiceResult<()> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        {
            let mut stmt = tx.prepare("INSERT INTO alarms (turbine_id, time_ns, text) VALUES (?1, ?2, ?3)")?;
            for e in events {
                stmt.execute(params![e.turbine_id, to_ns(e.time_on)?, e.text])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn alarms_between(&self, turbine: u32, from: DateTime<Utc>, to: DateTime<Utc>) -> ServiceResult<Vec<AlarmEvent>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT time_ns, text FROM alarms WHERE turbine_id = ?1 AND time_ns >= ?2 AND time_ns <= ?3
             ORDER BY time_ns, seq",
        )?;
        let from = from.timestamp_nanos_opt().unwrap_or(i64::MIN);
        let to = to.timestamp_nanos_opt().unwrap_or(i64::MAX);
        let rows = stmt.query_map(params![turbine, from, to], |row| {
            Ok(AlarmEvent {
                turbine_id: turbine,
                time_on: from_ns(row.get(0)?),
                text: row.get(1)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    fn latest_alarm_time(&self, turbine: u32) -> ServiceResult<Option<DateTime<Utc>>> {
        let conn = self.lock();
        let ns: Option<i64> = conn.query_row("SELECT MAX(time_ns) FROM alarms WHERE turbine_id = ?1", [turbine], |r| r.get(0))?;
        Ok(ns.map(from_ns))
    }

    fn insert_recommendation(&self, rec: &Recommendation) -> ServiceResult<()> {
        self.lock().execute(
            "INSERT INTO recommendations (id, status, body) VALUES (?1, ?2, ?3)",
            params![rec.id.to_string(), rec.status.as_str(), serde_json::to_string(rec)?],
        )?;
        Ok(())
    }

    fn recommendation(&self, id: Uuid) -> ServiceResult<Option<Recommendation>> {
        let body: Option<String> = self
            .lock()
            .query_row("SELECT body FROM recommendations WHERE id = ?1", [id.to_string()], |r| r.get(0))
            .optional()?;
        body.map(parse_rec).transpose()
    }

    fn list_recommendations(&self, status: Option<RecommendationStatus>, limit: usize) -> ServiceResult<Vec<Recommendation>> {
        let conn = self.lock();
        let limit = i64::try_from(limit).unwrap_or(i64::MAX);
        let bodies: Vec<String> = match status {
            Some(s) => {
                let mut stmt =
                    conn.prepare("SELECT body FROM recommendations WHERE status = ?1 ORDER BY seq DESC LIMIT ?2")?;
                let rows = stmt.query_map(params![s.as_str(), limit], |r| r.get(0))?;
                rows.collect::<Result<_, _>>()?
            }
            None => {
                let mut stmt = conn.prepare("SELECT body FROM recommendations ORDER BY seq DESC LIMIT ?1")?;
                let rows = stmt.query_map([limit], |r| r.get(0))?;
                rows.collect::<Result<_, _>>()?
            }
        };
        bodies.into_iter().map(parse_rec).collect()
    }

    fn resolve(
        &self,
        fb: &FeedbackRecord,
        status: RecommendationStatus,
        example: Option<&PairedDocument>,
    ) -> ServiceResult<ResolveOutcome> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let id = fb.recommendation_id.to_string();
        let body: Option<String> = tx
            .query_row("SELECT body FROM recommendations WHERE id = ?1", [&id], |r| r.get(0))
            .optional()?;
        let Some(body) = body else {
            return Ok(ResolveOutcome::NotFound);
        };
        let mut rec = parse_rec(body)?;
        if rec.status != RecommendationStatus::Pending {
            return Ok(ResolveOutcome::AlreadyResolved);
        }
        rec.status = status;
        rec.resolved_at = Some(fb.at);
        let next: i64 = tx.query_row("SELECT COALESCE(MAX(resolved_seq), 0) + 1 FROM recommendations", [], |r| r.get(0))?;
        tx.execute(
            "UPDATE recommendations SET status = ?1, resolved_seq = ?2, body = ?3 WHERE id = ?4",
            params![status.as_str(), next, serde_json::to_string(&rec)?, id],
        )?;
        tx.execute(
            "INSERT INTO feedback (recommendation_id, body) VALUES (?1, ?2)",
            params![id, serde_json::to_string(fb)?],
        )?;
        if let Some(doc) = example {
            tx.execute(
                "INSERT INTO buffer (recommendation_id, doc) VALUES (?1, ?2)",
                params![id, serde_json::to_string(doc)?],
            )?;
        }
        tx.commit()?;
        Ok(ResolveOutcome::Resolved(rec))
    }

    fn feedback_for(&self, id: Uuid) -> ServiceResult<Vec<FeedbackRecord>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT body FROM feedback WHERE recommendation_id = ?1 ORDER BY seq")?;
        let rows = stmt.query_map([id.to_string()], |r| r.get::<_, String>(0))?;
        rows.map(|b| Ok(serde_json::from_str(&b?)?)).collect()
    }

    fn recent_outcomes(&self, n: usize) -> ServiceResult<Vec<RecommendationStatus>> {
        let conn = self.lock();
        let mut stmt = conn.prepare(
            "SELECT status FROM recommendations WHERE resolved_seq IS NOT NULL ORDER BY resolved_seq DESC LIMIT ?1",
        )?;
        let rows = stmt.query_map([i64::try_from(n).unwrap_or(i64::MAX)], |r| r.get::<_, String>(0))?;
        rows.map(|s| {
            let s = s?;
            RecommendationStatus::parse(&s).ok_or_else(|| ServiceError::Store(format!("bad status `{s}`")))
        })
        .collect()
    }

    fn buffer(&self) -> ServiceResult<Vec<BufferedExample>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT id, recommendation_id, doc FROM buffer ORDER BY id")?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?)))?;
        rows.map(|row| {
            let (id, rec, doc) = row?;
            Ok(BufferedExample {
                id,
                recommendation_id: Uuid::parse_str(&rec).map_err(|e| ServiceError::Store(e.to_string()))?,
                doc: serde_json::from_str(&doc)?,
            })
        })
        .collect()
    }

    fn absorb_buffer(&self, ids: &[i64]) -> ServiceResult<usize> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let mut moved = 0;
        for id in ids {
            let doc: Option<String> = tx.query_row("SELECT doc FROM buffer WHERE id = ?1", [id], |r| r.get(0)).optional()?;
            if let Some(doc) = doc {
                tx.execute("INSERT INTO absorbed (doc) VALUES (?1)", [doc])?;
                tx.execute("DELETE FROM buffer WHERE id = ?1", [id])?;
                moved += 1;
            }
        }
        tx.commit()?;
        Ok(moved)
    }

    fn absorbed(&self) -> ServiceResult<Vec<PairedDocument>> {
        let conn = self.lock();
        let mut stmt = conn.prepare("SELECT doc FROM absorbed ORDER BY seq")?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        rows.map(|d| Ok(serde_json::from_str(&d?)?)).collect()
    }

    fn model_version(&self) -> ServiceResult<Option<u64>> {
        let v: Option<String> = self
            .lock()
            .query_row("SELECT value FROM meta WHERE key = 'model_version'", [], |r| r.get(0))
            .optional()?;
        v.map(|s| s.parse().map_err(|_| ServiceError::Store(format!("bad model_version `{s}`"))))
            .transpose()
    }

    fn set_model_version(&self, version: u64) -> ServiceResult<()> {
        self.lock().execute(
            "INSERT INTO meta (key, value) VALUES ('model_version', ?1)
             ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            [version.to_string()],
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Verdict;
    use chrono::TimeZone;

    fn at(s: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2016, 5, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(s)
    }

    fn alarm(turbine: u32, s: i64, text: &str) -> AlarmEvent {
        AlarmEvent {
            turbine_id: turbine,
            time_on: at(s),
            text: text.into(),
        }
    }

    fn rec(n: u128) -> Recommendation {
        Recommendation {
            id: Uuid::from_u128(n),
            turbine_id: 1,
            created_at: at(n as i64),
            alarm_window: vec![alarm(1, 0, "a")],
            ranked: vec![],
            markov_next: None,
            status: RecommendationStatus::Pending,
            model_version: 1,
            resolved_at: None,
        }
    }

    fn fb(n: u128, verdict: Verdict) -> FeedbackRecord {
        FeedbackRecord {
            recommendation_id: Uuid::from_u128(n),
            rating: 4,
            verdict,
            corrected_label: None,
            actor: "ops".into(),
            at: at(100),
        }
    }

    fn doc(label: &str) -> PairedDocument {
        PairedDocument {
            turbine_id: 1,
            response_time: at(5),
            label: label.into(),
            alarm_tokens: vec!["a".into()],
        }
    }

    fn exercise(store: &dyn Store) {
        store
            .insert_alarms(&[alarm(1, 10, "b"), alarm(1, 0, "a"), alarm(2, 5, "c"), alarm(1, 10, "c")])
            .unwrap();
        let got = store.alarms_between(1, at(0), at(10)).unwrap();
        let texts: Vec<&str> = got.iter().map(|a| a.text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
        assert_eq!(store.alarms_between(1, at(1), at(9)).unwrap(), vec![]);
        assert_eq!(store.latest_alarm_time(1).unwrap(), Some(at(10)));
        assert_eq!(store.latest_alarm_time(9).unwrap(), None);

        for n in 1..=3 {
            store.insert_recommendation(&rec(n)).unwrap();
        }
        assert_eq!(store.recommendation(Uuid::from_u128(2)).unwrap(), Some(rec(2)));
        assert_eq!(store.recommendation(Uuid::from_u128(9)).unwrap(), None);
        let listed = store.list_recommendations(None, 2).unwrap();
        assert_eq!(listed.iter().map(|r| r.id).collect::<Vec<_>>(), [Uuid::from_u128(3), Uuid::from_u128(2)]);

        let out = store.resolve(&fb(2, Verdict::Accept), RecommendationStatus::Accepted, None).unwrap();
        let ResolveOutcome::Resolved(r) = out else { panic!("{out:?}") };
        assert_eq!(r.status, RecommendationStatus::Accepted);
        assert_eq!(
            store.resolve(&fb(2, Verdict::Accept), RecommendationStatus::Accepted, None).unwrap(),
            ResolveOutcome::AlreadyResolved
        );
        assert_eq!(
            store.resolve(&fb(7, Verdict::Accept), RecommendationStatus::Accepted, None).unwrap(),
            ResolveOutcome::NotFound
        );
        store
            .resolve(&fb(1, Verdict::Reject), RecommendationStatus::Corrected, Some(&doc("fix")))
            .unwrap();
        assert_eq!(
            store.recent_outcomes(10).unwrap(),
            [RecommendationStatus::Corrected, RecommendationStatus::Accepted]
        );
        assert_eq!(store.recent_outcomes(1).unwrap(), [RecommendationStatus::Corrected]);
        assert_eq!(store.list_recommendations(Some(RecommendationStatus::Pending), 10).unwrap().len(), 1);
        assert_eq!(store.feedback_for(Uuid::from_u128(2)).unwrap().len(), 1);

        let buffer = store.buffer().unwrap();
        assert_eq!(buffer.len(), 1);
        assert_eq!(buffer[0].doc, doc("fix"));
        assert_eq!(store.absorb_buffer(&[buffer[0].id]).unwrap(), 1);
        assert_eq!(store.absorb_buffer(&[buffer[0].id]).unwrap(), 0);
        assert!(store.buffer().unwrap().is_empty());
        assert_eq!(store.absorbed().unwrap(), vec![doc("fix")]);

        assert_eq!(store.model_version().unwrap(), None);
        store.set_model_version(3).unwrap();
        store.set_model_version(4).unwrap();
        assert_eq!(store.model_version().unwrap(), Some(4));
    }

    #[test]
    fn memory_store_contract() {
        exercise(&MemoryStore::new());
    }

    #[test]
    fn sqlite_store_contract() {
        exercise(&SqliteStore::open_in_memory().unwrap());
    }

    #[test]
    fn sqlite_persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("svc.db");
        {
            let s = SqliteStore::open(&path).unwrap();
            s.insert_alarms(&[alarm(1, 0, "a")]).unwrap();
            s.insert_recommendation(&rec(1)).unwrap();
            s.resolve(&fb(1, Verdict::Reject), RecommendationStatus::Corrected, Some(&doc("x")))
                .unwrap();
        }
        let s = SqliteStore::open(&path).unwrap();
        assert_eq!(s.alarms_between(1, at(0), at(0)).unwrap().len(), 1);
        assert_eq!(s.recommendation(Uuid::from_u128(1)).unwrap().unwrap().status, RecommendationStatus::Corrected);
        assert_eq!(s.buffer().unwrap().len(), 1);
    }
}
