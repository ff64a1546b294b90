//! Building Knowledge Repository.
//!
//! Holds the device registry, the rules store and two data zones: a
//! real-time zone with the trailing day of state vectors, and an
//! append-only historical zone with hourly aggregates, superseded baselines
//! and the named logs other layers archive (journal, schedules, reports).
//!
//! On disk the repository is `bkr/{registry,rules,rt,hist}/`:
//! `registry/devices.json` (snapshot), `rules/rules.json`,
//! `rt/seg-NNNNNNNN.jsonl` (one vector per line, one file per 60 ticks) and
//! `hist/*.jsonl` plus `hist/watermark.json`.

mod hist;
mod registry;
mod rt;
mod rules;

pub use hist::*;
pub use registry::*;
pub use rt::*;
pub use rules::*;

use crate::jsonl;
use crate::stream::StateVector;
use crate::types::Tick;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BkrError {
    #[error("device {0} already registered")]
    Conflict(String),
    #[error("point {point} already owned by {owner}")]
    PointConflict { point: String, owner: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("insufficient data: {have} samples, need {need}")]
    InsufficientData { have: u64, need: u64 },
    #[error("tick {tick} is not after latest stored tick {latest}")]
    OutOfOrder { tick: Tick, latest: Tick },
    #[error("{0} unavailable")]
    Unavailable(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BkrConfig {
    /// Ticks retained in the real-time zone.
    pub retention_ticks: usize,
    pub min_baseline_samples: u64,
    /// Flush every real-time write to disk.
    pub rt_fsync: bool,
}

impl Default for BkrConfig {
    fn default() -> Self {
        Self {
            retention_ticks: 1440,
            min_baseline_samples: 60,
            rt_fsync: false,
        }
    }
}

/// What `Bkr::open` found on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recovery {
    pub registry_devices: usize,
    pub rt_latest: Option<Tick>,
    /// False when the historical zone was missing and had to be recreated.
    pub hist_recovered: bool,
}

#[derive(Debug)]
pub struct Bkr {
    pub config: BkrConfig,
    registry: Registry,
    pub rt: RtZone,
    pub hist: HistZone,
    pub rules: RulesStore,
    dir: Option<PathBuf>,
}

impl Bkr {
    pub fn in_memory(config: BkrConfig) -> Self {
        Self {
            rt: RtZone::new(config.retention_ticks),
            config,
            registry: Registry::default(),
            hist: HistZone::in_memory(),
            rules: RulesStore::default(),
            dir: None,
        }
    }

    pub fn open(dir: impl AsRef<Path>, config: BkrConfig) -> Result<(Self, Recovery), BkrError> {
        let dir = dir.as_ref().to_path_buf();
        let hist_dir = dir.join("hist");
        let hist_recovered = HistZone::exists(&hist_dir);
        let reg_path = dir.join("registry").join("devices.json");
        let registry = if reg_path.exists() {
            let snap: RegistryFile =
                serde_json::from_slice(&std::fs::read(&reg_path)?).map_err(|e| BkrError::Corrupt(e.to_string()))?;
            Registry::from_records(snap.devices, snap.version)?
        } else {
            Registry::default()
        };
        let rt = RtZone::open(dir.join("rt"), config.retention_ticks, config.rt_fsync)?;
        let hist = HistZone::open(hist_dir)?;
        let rules = RulesStore::open(dir.join("rules").join("rules.json"))?;
        let rec = Recovery {
            registry_devices: registry.snapshot().len(),
            rt_latest: rt.latest().map(|s| s.tick),
            hist_recovered,
        };
        Ok((
            Self {
                config,
                registry,
                rt,
                hist,
                rules,
                dir: Some(dir),
            },
            rec,
        ))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn registry(&self) -> RegistrySnapshot {
        self.registry.snapshot()
    }

    fn save_registry(&self) -> Result<(), BkrError> {
        if let Some(dir) = &self.dir {
            let file = RegistryFile {
                version: self.registry.version(),
                devices: self.registry.records(),
            };
            jsonl::write_json_atomic(dir.join("registry").join("devices.json"), &file)?;
        }
        Ok(())
    }

    pub fn register_device(&mut self, rec: DeviceRecord) -> Result<(), BkrError> {
        self.registry.register_device(rec)?;
        self.save_registry()
    }

    pub fn update_device(&mut self, rec: DeviceRecord) -> Result<(), BkrError> {
        self.registry.update_device(rec)?;
        self.save_registry()
    }

    /// Installs a new active baseline for `point_id`, archiving the old one.
    pub fn update_baseline(
        &mut self,
        point_id: &str,
        stats: Baseline,
        provenance: BaselineProvenance,
        tick: Tick,
    ) -> Result<(), BkrError> {
        if stats.sample_count < self.config.min_baseline_samples {
            return Err(BkrError::InsufficientData {
                have: stats.sample_count,
                need: self.config.min_baseline_samples,
            });
        }
        let snap = self.registry.snapshot();
        let mut rec = snap
            .device_for_point(point_id)
            .cloned()
            .ok_or_else(|| BkrError::NotFound(point_id.to_string()))?;
        self.hist.archive_baseline(BaselineArchiveEntry {
            point_id: point_id.to_string(),
            device_id: rec.device_id.clone(),
            previous: rec.baseline,
            replacement: stats,
            provenance,
            tick,
        })?;
        rec.baseline = stats;
        self.update_device(rec)
    }

    pub fn write_rt(&mut self, sv: &StateVector) -> Result<(), BkrError> {
        self.rt.write(sv)
    }

    pub fn read_rt(&self, from: Tick, to: Tick) -> RtRead {
        self.rt.read(from, to)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    version: u64,
    devices: Vec<DeviceRecord>,
}
