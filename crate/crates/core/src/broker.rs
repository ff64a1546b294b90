//! In-process streaming platform: ordered, deduplicated topics.
//!
//! Exactly-once delivery is built from two halves. Admission is idempotent
//! on the producer key `(device_id, point_id, seq_no)`, so a re-published
//! reading is refused. Consumers commit the last offset they processed and
//! resume from the one after it, so a crash re-reads at most the uncommitted
//! tail, which downstream dedup on the same key absorbs.
//!
//! When opened on a directory each topic is a JSON-lines file
//! `topics/<name>.jsonl` holding one `{offset, device_id, point_id, seq_no,
//! ts, value, unit, quality, source}` object per line; consumer offsets live
//! in `commits.json`.

use crate::jsonl::{self, JsonlWriter};
use crate::types::SensorMessage;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub offset: u64,
    #[serde(flatten)]
    pub msg: SensorMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Accepted(u64),
    Duplicate,
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("invalid message: {0}")]
    Validation(String),
    #[error("topic {0} not found")]
    NotFound(String),
    #[error("commit of offset {offset} on {topic} regresses committed offset {committed}")]
    CommitRegression {
        topic: String,
        offset: u64,
        committed: u64,
    },
    #[error("commit of offset {offset} on {topic} is beyond high-water mark {hwm}")]
    CommitBeyondEnd { topic: String, offset: u64, hwm: u64 },
    #[error("broker storage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default)]
struct Topic {
    entries: Vec<LogEntry>,
    dedup: HashSet<(String, String, u64)>,
    writer: Option<JsonlWriter>,
}

#[derive(Debug, Default)]
struct State {
    topics: BTreeMap<String, Topic>,
    commits: BTreeMap<String, BTreeMap<String, u64>>,
}

#[derive(Debug)]
struct Inner {
    state: Mutex<State>,
    dir: Option<PathBuf>,
}

/// Cheap to clone; all clones share the same topics.
#[derive(Debug, Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::in_memory()
    }
}

fn validate(msg: &SensorMessage) -> Result<(), BrokerError> {
    if msg.device_id.is_empty() {
        return Err(BrokerError::Validation("missing device_id".into()));
    }
    if msg.point_id.is_empty() {
        return Err(BrokerError::Validation("missing point_id".into()));
    }
    if !msg.value.is_finite() {
        return Err(BrokerError::Validation(format!(
            "non-finite value for {}",
            msg.point_id
        )));
    }
    Ok(())
}

impl Broker {
    pub fn in_memory() -> Self {
        Self {
            inner: Arc::new(Inner {
                state: Mutex::new(State::default()),
                dir: None,
            }),
        }
    }

    /// Opens (or creates) a file-backed broker and reloads every topic.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BrokerError> {
        let dir = dir.as_ref().to_path_buf();
        let topics_dir = dir.join("topics");
        fs::create_dir_all(&topics_dir)?;
        let mut state = State::default();
        let mut names: Vec<_> = fs::read_dir(&topics_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        names.sort();
        for path in names {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let entries: Vec<LogEntry> = jsonl::read_all(&path)?;
            let mut topic = Topic::default();
            for (i, e) in entries.into_iter().enumerate() {
                if e.offset != i as u64 {
                    return Err(BrokerError::Validation(format!(
                        "topic {name}: offset gap at line {i}"
                    )));
                }
                topic.dedup.insert(e.msg.dedup_key());
                topic.entries.push(e);
            }
            topic.writer = Some(JsonlWriter::open(&path, false)?);
            state.topics.insert(name, topic);
        }
        let commits_path = dir.join("commits.json");
        if commits_path.exists() {
            state.commits = serde_json::from_slice(&fs::read(&commits_path)?)
                .map_err(|e| BrokerError::Validation(e.to_string()))?;
        }
        Ok(Self {
            inner: Arc::new(Inner {
                state: Mutex::new(state),
                dir: Some(dir),
            }),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_topic(&self, name: &str) -> Result<(), BrokerError> {
        let mut st = self.lock();
        self.ensure_topic(&mut st, name)?;
        Ok(())
    }

    fn ensure_topic<'a>(&self, st: &'a mut State, name: &str) -> Result<&'a mut Topic, BrokerError> {
        if !st.topics.contains_key(name) {
            tracing::info!(topic = name, "creating topic");
            let mut t = Topic::default();
            if let Some(dir) = &self.inner.dir {
                t.writer = Some(JsonlWriter::open(dir.join("topics").join(format!("{name}.jsonl")), false)?);
            }
            st.topics.insert(name.to_string(), t);
        }
        Ok(st.topics.get_mut(name).expect("just inserted"))
    }

    /// Appends `msg` unless its producer key was already admitted.
    pub fn publish(&self, topic: &str, msg: SensorMessage) -> Result<Admission, BrokerError> {
        validate(&msg)?;
        let mut st = self.lock();
        let t = self.ensure_topic(&mut st, topic)?;
        if !t.dedup.insert(msg.dedup_key()) {
            return Ok(Admission::Duplicate);
        }
        let entry = LogEntry {
            offset: t.entries.len() as u64,
            msg,
        };
        if let Some(w) = t.writer.as_mut() {
            if let Err(e) = w.append(&entry) {
                t.dedup.remove(&entry.msg.dedup_key());
                return Err(e.into());
            }
        }
        let off = entry.offset;
        t.entries.push(entry);
        Ok(Admission::Accepted(off))
    }

    pub fn topics(&self) -> Vec<String> {
        self.lock().topics.keys().cloned().collect()
    }

    /// Next offset to be assigned on `topic`.
    pub fn high_water_mark(&self, topic: &str) -> Result<u64, BrokerError> {
        self.lock()
            .topics
            .get(topic)
            .map(|t| t.entries.len() as u64)
            .ok_or_else(|| BrokerError::NotFound(topic.into()))
    }

    pub fn subscribe(&self, topic: &str, from_offset: u64) -> Result<Cursor, BrokerError> {
        if !self.lock().topics.contains_key(topic) {
            return Err(BrokerError::NotFound(topic.into()));
        }
        Ok(Cursor {
            broker: self.clone(),
            topic: topic.to_string(),
            next: from_offset,
        })
    }

    /// Cursor positioned after the consumer's last committed offset.
    pub fn resume(&self, topic: &str, consumer: &str) -> Result<Cursor, BrokerError> {
        let from = self.committed(topic, consumer).map_or(0, |c| c + 1);
        self.subscribe(topic, from)
    }

    pub fn committed(&self, topic: &str, consumer: &str) -> Option<u64> {
        self.lock()
            .commits
            .get(consumer)
            .and_then(|m| m.get(topic))
            .copied()
    }

    /// Records that `consumer` has fully processed `offset` on `topic`.
    pub fn commit(&self, topic: &str, consumer: &str, offset: u64) -> Result<(), BrokerError> {
        let mut st = self.lock();
        let hwm = st
            .topics
            .get(topic)
            .map(|t| t.entries.len() as u64)
            .ok_or_else(|| BrokerError::NotFound(topic.into()))?;
        if offset >= hwm {
            return Err(BrokerError::CommitBeyondEnd {
                topic: topic.into(),
                offset,
                hwm,
            });
        }
        let slot = st.commits.entry(consumer.to_string()).or_default();
        if let Some(&c) = slot.get(topic) {
            if offset < c {
                return Err(BrokerError::CommitRegression {
                    topic: topic.into(),
                    offset,
                    committed: c,
                });
            }
        }
        slot.insert(topic.to_string(), offset);
        if let Some(dir) = &self.inner.dir {
            jsonl::write_json_atomic(dir.join("commits.json"), &st.commits)?;
        }
        Ok(())
    }

    fn read(&self, topic: &str, offset: u64, max: usize) -> Vec<LogEntry> {
        let st = self.lock();
        match st.topics.get(topic) {
            Some(t) => t
                .entries
                .iter()
                .skip(offset as usize)
                .take(max)
                .cloned()
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Offset-ordered reader over one topic. Reaching the high-water mark ends
/// iteration; entries appended later are picked up by iterating again.
#[derive(Debug, Clone)]
pub struct Cursor {
    broker: Broker,
    topic: String,
    next: u64,
}

impl Cursor {
    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Everything currently available, advancing the cursor past it.
    pub fn drain(&mut self) -> Vec<LogEntry> {
        let out = self.broker.read(&self.topic, self.next, usize::MAX);
        self.next += out.len() as u64;
        out
    }
}

impl Iterator for Cursor {
    type Item = LogEntry;

    fn next(&mut self) -> Option<LogEntry> {
        let e = self.broker.read(&self.topic, self.next, 1).pop()?;
        self.next += 1;
        Some(e)
    }
}
