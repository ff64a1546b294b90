//! Offline replay of a legacy export through the broker, the stream engine
//! and the change detector, either via the legacy adapter or as if the same
//! readings had been published natively.

use super::legacy::{LegacyAdapter, LegacyError, LegacyIngestStats, LegacyMapping, LegacyRow};
use crate::bkr::{Baseline, BkrError, DeviceRecord, Registry};
use crate::broker::{Broker, BrokerError};
use crate::cdo::{ChangeDetector, ChangeEvent, Detector, DetectorConfig};
use crate::simulator::PointSpec;
use crate::stream::{StateVector, StreamEngine, StreamError, TransformTable};
use crate::types::{SensorMessage, Source, Tick};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const REPLAY_TOPIC: &str = "legacy";
const REPLAY_CONSUMER: &str = "replay";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Emission {
    /// Rows go through the legacy adapter.
    Legacy,
    /// The mapped rows are converted up front and published as native
    /// messages with their own sequence numbers.
    Native,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub tick_ms: i64,
    /// Ticks at the start of the dump the baselines are taken from.
    pub baseline_ticks: u64,
    pub detector: DetectorConfig,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            tick_ms: 60_000,
            baseline_ticks: 100,
            detector: DetectorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub emission: Emission,
    pub ticks: Tick,
    pub published: u64,
    pub duplicates: u64,
    pub quarantined: u64,
    pub events: Vec<ChangeEvent>,
    pub vectors: Vec<StateVector>,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("legacy mapping rejected: {0:?}")]
    Mapping(Vec<LegacyError>),
    #[error("mapped point {0} is not part of the building")]
    UnknownPoint(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Registry(#[from] BkrError),
}

/// Replays `rows` tick by tick and reports the state vectors and change
/// events they produce. Ranges and classes come from `catalog`.
pub fn replay(
    mapping: &LegacyMapping,
    rows: &[LegacyRow],
    catalog: &BTreeMap<String, PointSpec>,
    emission: Emission,
    cfg: &ReplayConfig,
) -> Result<ReplayOutcome, ReplayError> {
    let adapter = LegacyAdapter::new(mapping.clone(), &BTreeSet::new()).map_err(ReplayError::Mapping)?;
    let transforms = adapter.transforms();
    let canonical: Vec<SensorMessage> = rows
        .iter()
        .filter_map(|r| adapter.translate(r))
        .map(|m| {
            let (value, unit) = transforms.canonical(&m);
            SensorMessage { value, unit, ..m }
        })
        .collect();

    let mut registry = Registry::default();
    let baseline_end = cfg.baseline_ticks as i64 * cfg.tick_ms;
    for m in &mapping.points {
        let spec = catalog
            .get(&m.point_id)
            .ok_or_else(|| ReplayError::UnknownPoint(m.point_id.clone()))?;
        let samples: Vec<f64> = canonical
            .iter()
            .filter(|c| c.point_id == m.point_id && c.timestamp < baseline_end)
            .map(|c| c.value)
            .collect();
        registry.register_device(DeviceRecord {
            device_id: m.device_id.clone(),
            point_ids: vec![m.point_id.clone()],
            class: spec.quantity.clone(),
            confidence: 1.0,
            system: spec.system_id.clone(),
            system_kind: Some(spec.system_kind),
            operating_range: spec.range,
            unit: spec.unit.clone(),
            baseline: Baseline::from_samples(&samples),
            source: match emission {
                Emission::Legacy => Source::LegacyBas,
                Emission::Native => Source::Native,
            },
            commissioned_at: 0,
            waived: false,
        })?;
    }
    let snapshot = registry.snapshot();

    let broker = Broker::in_memory();
    broker.create_topic(REPLAY_TOPIC)?;
    let (stats, engine_transforms) = match emission {
        Emission::Legacy => (adapter.ingest(&broker, REPLAY_TOPIC, rows)?, transforms),
        Emission::Native => {
            let mut stats = LegacyIngestStats::default();
            let mut seq: BTreeMap<String, u64> = BTreeMap::new();
            for m in canonical {
                let n = seq.entry(m.point_id.clone()).or_default();
                *n += 1;
                let msg = SensorMessage {
                    seq_no: *n,
                    source: Source::Native,
                    ..m
                };
                broker.publish(REPLAY_TOPIC, msg)?;
                stats.published += 1;
            }
            (stats, TransformTable::default())
        }
    };

    let last_ts = rows.iter().map(|r| r.ts_ms).max().unwrap_or(0);
    let ticks = (last_ts / cfg.tick_ms + 1).max(0) as Tick;
    let mut engine = StreamEngine::new(0, cfg.tick_ms, engine_transforms);
    let mut cursors = vec![broker.resume(REPLAY_TOPIC, REPLAY_CONSUMER)?];
    let mut detector = Detector::new(cfg.detector.clone());
    let mut events = Vec::new();
    let mut vectors = Vec::with_capacity(ticks as usize);
    for t in 0..ticks {
        let (sv, _) = engine.ingest_tick(t, &broker, &mut cursors, REPLAY_CONSUMER, &snapshot)?;
        events.extend(detector.observe(&sv, &snapshot));
        vectors.push(sv);
    }
    Ok(ReplayOutcome {
        emission,
        ticks,
        published: stats.published,
        duplicates: stats.duplicates,
        quarantined: stats.quarantined,
        events,
        vectors,
    })
}
