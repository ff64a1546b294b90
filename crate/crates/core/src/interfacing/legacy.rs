use crate::broker::{Admission, Broker, BrokerError};
use crate::stream::{TransformSpec, TransformTable, QUARANTINE_TOPIC};
use crate::types::{Quality, SensorMessage, Source};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// One change-of-value row as exported by the legacy supervisory system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyRow {
    pub ts_ms: i64,
    pub name: String,
    pub value: f64,
    pub units: String,
    #[serde(default)]
    pub alarm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyPointMap {
    pub legacy_name: String,
    pub point_id: String,
    pub device_id: String,
    /// Conversion from the legacy unit into the canonical one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LegacyMapping {
    pub points: Vec<LegacyPointMap>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LegacyError {
    #[error("legacy point {legacy} maps onto native point {point}")]
    NativeCollision { legacy: String, point: String },
    #[error("legacy name {0} is mapped twice")]
    DuplicateName(String),
    #[error("point {0} is the target of two legacy names")]
    DuplicateTarget(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegacyIngestStats {
    pub published: u64,
    pub duplicates: u64,
    pub quarantined: u64,
}

/// Message-level bridge from a legacy automation system onto the broker.
#[derive(Debug, Clone)]
pub struct LegacyAdapter {
    by_name: BTreeMap<String, LegacyPointMap>,
}

impl LegacyAdapter {
    /// Checks the mapping against itself and against the points the
    /// building already publishes natively.
    pub fn new(mapping: LegacyMapping, native_points: &BTreeSet<String>) -> Result<Self, Vec<LegacyError>> {
        let mut errs = Vec::new();
        let mut by_name = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for m in mapping.points {
            if native_points.contains(&m.point_id) {
                errs.push(LegacyError::NativeCollision {
                    legacy: m.legacy_name.clone(),
                    point: m.point_id.clone(),
                });
            }
            if !targets.insert(m.point_id.clone()) {
                errs.push(LegacyError::DuplicateTarget(m.point_id.clone()));
            }
            if by_name.contains_key(&m.legacy_name) {
                errs.push(LegacyError::DuplicateName(m.legacy_name.clone()));
                continue;
            }
            by_name.insert(m.legacy_name.clone(), m);
        }
        if errs.is_empty() {
            Ok(Self { by_name })
        } else {
            Err(errs)
        }
    }

    /// Unit conversions the stream engine must apply to adapted points.
    pub fn transforms(&self) -> TransformTable {
        TransformTable(
            self.by_name
                .values()
                .filter_map(|m| m.transform.clone().map(|t| (m.point_id.clone(), t)))
                .collect(),
        )
    }

    /// The legacy system has no sequence numbers; its per-point timestamps
    /// are strictly increasing, so they serve as one.
    pub fn translate(&self, row: &LegacyRow) -> Option<SensorMessage> {
        let m = self.by_name.get(&row.name)?;
        Some(SensorMessage {
            device_id: m.device_id.clone(),
            point_id: m.point_id.clone(),
            seq_no: row.ts_ms as u64,
            timestamp: row.ts_ms,
            value: row.value,
            unit: row.units.clone(),
            quality: if row.alarm { Quality::Suspect } else { Quality::Good },
            source: Source::LegacyBas,
        })
    }

    /// Publishes the mapped rows on `topic` and the rest on the quarantine
    /// topic.
    pub fn ingest<'a>(
        &self,
        broker: &Broker,
        topic: &str,
        rows: impl IntoIterator<Item = &'a LegacyRow>,
    ) -> Result<LegacyIngestStats, BrokerError> {
        let mut stats = LegacyIngestStats::default();
        for row in rows {
            match self.translate(row) {
                Some(msg) => match broker.publish(topic, msg)? {
                    Admission::Accepted(_) => stats.published += 1,
                    Admission::Duplicate => stats.duplicates += 1,
                },
                None => {
                    let msg = SensorMessage {
                        device_id: "legacy".into(),
                        point_id: format!("legacy/{}", row.name),
                        seq_no: row.ts_ms as u64,
                        timestamp: row.ts_ms,
                        value: row.value,
                        unit: row.units.clone(),
                        quality: Quality::Suspect,
                        source: Source::LegacyBas,
                    };
                    broker.publish(QUARANTINE_TOPIC, msg)?;
                    stats.quarantined += 1;
                }
            }
        }
        Ok(stats)
    }
}
