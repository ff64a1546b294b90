//! Streaming engine: turns sparse change-of-value messages into one complete
//! multivariate snapshot per tick.
//!
//! Missing points are imputed by carrying the last observation forward and
//! tagging it with its age. A point that has never been observed is seeded
//! from its registry baseline mean. Messages for points the registry does
//! not know are forwarded to a quarantine topic so discovery can pick them
//! up later.

use crate::bkr::{Bkr, BkrError, RegistrySnapshot};
use crate::broker::{Broker, BrokerError, Cursor};
use crate::types::{Quality, SensorMessage, Tick};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const QUARANTINE_TOPIC: &str = "quarantine";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointValue {
    pub value: f64,
    pub provenance: Provenance,
    pub age_ticks: u64,
    pub quality: Quality,
    /// Observed from a message stamped before the window it landed in.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub late: bool,
}

/// Coherent snapshot of every registered point at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub tick: Tick,
    pub tick_ts: i64,
    pub values: BTreeMap<String, PointValue>,
}

impl StateVector {
    pub fn value(&self, point: &str) -> Option<f64> {
        self.values.get(point).map(|v| v.value)
    }
}

/// Affine conversion `a·x + b` into the canonical unit, optionally clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub a: f64,
    pub b: f64,
    pub canonical_unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("transform for {0} is not invertible (a = 0)")]
    NotInvertible(String),
    #[error("transform for {0} has non-finite coefficients")]
    NonFinite(String),
}

impl TransformSpec {
    pub fn identity(unit: &str) -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            canonical_unit: unit.to_string(),
            clamp: None,
        }
    }

    pub fn fahrenheit_to_celsius() -> Self {
        Self {
            a: 5.0 / 9.0,
            b: -32.0 * 5.0 / 9.0,
            canonical_unit: "°C".into(),
            clamp: None,
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        let v = self.a * raw + self.b;
        match self.clamp {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }

    pub fn invert(&self, canonical: f64) -> f64 {
        (canonical - self.b) / self.a
    }
}

/// Transform table keyed by point id. Points without an entry pass through.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformTable(pub BTreeMap<String, TransformSpec>);

impl TransformTable {
    pub fn validate(&self) -> Result<(), Vec<TransformError>> {
        let errs: Vec<_> = self
            .0
            .iter()
            .filter_map(|(p, t)| {
                if !(t.a.is_finite() && t.b.is_finite()) {
                    Some(TransformError::NonFinite(p.clone()))
                } else if t.a == 0.0 {
                    Some(TransformError::NotInvertible(p.clone()))
                } else {
                    None
                }
            })
            .collect();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// Canonical value and unit of a raw message.
    pub fn canonical(&self, msg: &SensorMessage) -> (f64, String) {
        match self.0.get(&msg.point_id) {
            Some(t) => (t.apply(msg.value), t.canonical_unit.clone()),
            None => (msg.value, msg.unit.clone()),
        }
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("persisting tick {tick} failed after {attempts} attempts: {source}")]
    DeadLetter {
        tick: Tick,
        attempts: u32,
        source: BkrError,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub observed: usize,
    pub imputed: usize,
    pub late: usize,
    pub quarantined: usize,
}

/// Result of persisting one vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistOutcome {
    pub attempts: u32,
}

#[derive(Debug)]
pub struct StreamEngine {
    tick_ms: i64,
    start_ms: i64,
    transforms: TransformTable,
    prev: BTreeMap<String, PointValue>,
    /// Messages stamped at or after the current window end, held back.
    carry: Vec<SensorMessage>,
    quarantined_total: u64,
    max_persist_attempts: u32,
}

impl StreamEngine {
    pub fn new(start_ms: i64, tick_ms: i64, transforms: TransformTable) -> Self {
        Self {
            tick_ms,
            start_ms,
            transforms,
            prev: BTreeMap::new(),
            carry: Vec::new(),
            quarantined_total: 0,
            max_persist_attempts: 4,
        }
    }

    pub fn transforms(&self) -> &TransformTable {
        &self.transforms
    }

    pub fn quarantined_total(&self) -> u64 {
        self.quarantined_total
    }

    /// Start of the half-open window `[start, start + tick_ms)` for `tick`.
    pub fn window_start(&self, tick: Tick) -> i64 {
        self.start_ms + tick as i64 * self.tick_ms
    }

    /// Restores LOCF state from the last persisted vector.
    pub fn restore(&mut self, last: &StateVector) {
        self.prev = last.values.clone();
    }

    /// Assembles the vector for `tick` from `batch` and the previous state.
    /// Unregistered points are returned separately for quarantine.
    pub fn assemble(
        &mut self,
        tick: Tick,
        batch: Vec<SensorMessage>,
        registry: &RegistrySnapshot,
    ) -> (StateVector, Vec<SensorMessage>, IngestStats) {
        let start = self.window_start(tick);
        let end = start + self.tick_ms;
        let mut stats = IngestStats::default();
        let mut latest: BTreeMap<String, (SensorMessage, bool)> = BTreeMap::new();
        let mut quarantine = Vec::new();
        let mut pending = std::mem::take(&mut self.carry);
        pending.extend(batch);
        for m in pending {
            if m.timestamp >= end {
                self.carry.push(m);
                continue;
            }
            if registry.device_for_point(&m.point_id).is_none() {
                quarantine.push(m);
                continue;
            }
            let late = m.timestamp < start;
            let newer = latest
                .get(&m.point_id)
                .is_none_or(|(cur, _)| (m.timestamp, m.seq_no) >= (cur.timestamp, cur.seq_no));
            if newer {
                latest.insert(m.point_id.clone(), (m, late));
            }
        }
        let mut values = BTreeMap::new();
        for (point, rec) in registry.points() {
            let pv = if let Some((m, late)) = latest.remove(point) {
                stats.observed += 1;
                if late {
                    stats.late += 1;
                }
                let (v, _) = self.transforms.canonical(&m);
                PointValue {
                    value: v,
                    provenance: Provenance::Observed,
                    age_ticks: 0,
                    quality: m.quality,
                    late,
                }
            } else {
                stats.imputed += 1;
                match self.prev.get(point) {
                    Some(p) => PointValue {
                        value: p.value,
                        provenance: Provenance::Imputed,
                        age_ticks: p.age_ticks + 1,
                        quality: p.quality,
                        late: false,
                    },
                    None => PointValue {
                        value: rec.baseline.mean,
                        provenance: Provenance::Imputed,
                        age_ticks: 1,
                        quality: Quality::Good,
                        late: false,
                    },
                }
            };
            values.insert(point.clone(), pv);
        }
        stats.quarantined = quarantine.len();
        self.quarantined_total += quarantine.len() as u64;
        self.prev = values.clone();
        (
            StateVector {
                tick,
                tick_ts: start,
                values,
            },
            quarantine,
            stats,
        )
    }

    /// Full ingest step: drains the cursors, assembles the vector, forwards
    /// quarantined messages and commits the consumed offsets.
    pub fn ingest_tick(
        &mut self,
        tick: Tick,
        broker: &Broker,
        cursors: &mut [Cursor],
        consumer: &str,
        registry: &RegistrySnapshot,
    ) -> Result<(StateVector, IngestStats), StreamError> {
        let mut batch = Vec::new();
        let mut commits = Vec::new();
        for c in cursors.iter_mut() {
            let entries = c.drain();
            if let Some(last) = entries.last() {
                commits.push((c.topic().to_string(), last.offset));
            }
            batch.extend(entries.into_iter().map(|e| e.msg));
        }
        let (sv, quarantine, stats) = self.assemble(tick, batch, registry);
        for m in quarantine {
            broker.publish(QUARANTINE_TOPIC, m)?;
        }
        for (topic, off) in commits {
            broker.commit(&topic, consumer, off)?;
        }
        Ok((sv, stats))
    }

    /// Appends `sv` to the real-time zone, retrying a bounded number of times
    /// with doubling backoff before giving up.
    pub fn persist(&self, bkr: &mut Bkr, sv: &StateVector) -> Result<PersistOutcome, StreamError> {
        let mut backoff = std::time::Duration::from_millis(1);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match bkr.write_rt(sv) {
                Ok(()) => return Ok(PersistOutcome { attempts }),
                Err(e) if attempts >= self.max_persist_attempts => {
                    tracing::error!(tick = sv.tick, "state vector dead-lettered: {e}");
                    return Err(StreamError::DeadLetter {
                        tick: sv.tick,
                        attempts,
                        source: e,
                    });
                }
                Err(e) => {
                    tracing::warn!(tick = sv.tick, attempt = attempts, "retrying persist: {e}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}
