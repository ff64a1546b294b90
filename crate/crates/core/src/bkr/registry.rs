use super::BkrError;
use crate::types::{OperatingRange, Source, SystemKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Summary statistics of a point's normal operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub mean: f64,
    pub std: f64,
    pub sample_count: u64,
    /// Ticks the statistics were gathered over.
    pub window_ticks: u64,
}

impl Baseline {
    /// Population statistics of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let shift = samples.first().copied().unwrap_or(0.0);
        let mean = shift + samples.iter().map(|v| v - shift).sum::<f64>() / n.max(1.0);
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1.0);
        Self {
            mean,
            std: var.sqrt(),
            sample_count: samples.len() as u64,
            window_ticks: samples.len() as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineProvenance {
    StartUpCx,
    OCx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: String,
    pub point_ids: Vec<String>,
    pub class: String,
    pub confidence: f64,
    /// Parent building-equipment system id.
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_kind: Option<SystemKind>,
    pub operating_range: OperatingRange,
    pub unit: String,
    pub baseline: Baseline,
    pub source: Source,
    /// Simulated ms at registration.
    pub commissioned_at: i64,
    /// Registered despite a failed commissioning check, by operator waiver.
    #[serde(default)]
    pub waived: bool,
}

/// Immutable view of the registry. Cloning is cheap; writers publish a new
/// snapshot instead of mutating one readers may hold.
#[derive(Debug, Clone, Default)]
pub struct RegistrySnapshot {
    devices: Arc<BTreeMap<String, DeviceRecord>>,
    owners: Arc<BTreeMap<String, String>>,
    version: u64,
}

impl RegistrySnapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn get(&self, device_id: &str) -> Option<&DeviceRecord> {
        self.devices.get(device_id)
    }

    pub fn device_for_point(&self, point_id: &str) -> Option<&DeviceRecord> {
        self.owners.get(point_id).and_then(|d| self.devices.get(d))
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.devices.values()
    }

    /// Every registered point with its owning record, ordered by point id.
    pub fn points(&self) -> impl Iterator<Item = (&String, &DeviceRecord)> {
        self.owners.iter().map(|(p, d)| (p, &self.devices[d]))
    }
}

#[derive(Debug, Default)]
pub struct Registry {
    current: RegistrySnapshot,
}

impl Registry {
    pub fn from_records(records: Vec<DeviceRecord>, version: u64) -> Result<Self, BkrError> {
        let mut r = Registry::default();
        for rec in records {
            r.register_device(rec)?;
        }
        r.current.version = version;
        Ok(r)
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        self.current.clone()
    }

    pub fn version(&self) -> u64 {
        self.current.version
    }

    fn check(&self, rec: &DeviceRecord, replacing: bool) -> Result<(), BkrError> {
        if !rec.operating_range.is_valid() {
            return Err(BkrError::InvalidRecord(format!(
                "{}: operating range must satisfy min < max",
                rec.device_id
            )));
        }
        if !(rec.baseline.std >= 0.0) || !rec.baseline.mean.is_finite() {
            return Err(BkrError::InvalidRecord(format!("{}: invalid baseline", rec.device_id)));
        }
        for p in &rec.point_ids {
            if let Some(owner) = self.current.owners.get(p) {
                if !(replacing && owner == &rec.device_id) {
                    return Err(BkrError::PointConflict {
                        point: p.clone(),
                        owner: owner.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn register_device(&mut self, rec: DeviceRecord) -> Result<(), BkrError> {
        if self.current.devices.contains_key(&rec.device_id) {
            return Err(BkrError::Conflict(rec.device_id));
        }
        self.check(&rec, false)?;
        self.publish(rec);
        Ok(())
    }

    pub fn update_device(&mut self, rec: DeviceRecord) -> Result<(), BkrError> {
        let Some(old) = self.current.devices.get(&rec.device_id) else {
            return Err(BkrError::NotFound(rec.device_id));
        };
        let old_points = old.point_ids.clone();
        self.check(&rec, true)?;
        let mut owners = (*self.current.owners).clone();
        for p in old_points {
            owners.remove(&p);
        }
        self.current.owners = Arc::new(owners);
        self.publish(rec);
        Ok(())
    }

    fn publish(&mut self, rec: DeviceRecord) {
        let mut devices = (*self.current.devices).clone();
        let mut owners = (*self.current.owners).clone();
        for p in &rec.point_ids {
            owners.insert(p.clone(), rec.device_id.clone());
        }
        devices.insert(rec.device_id.clone(), rec);
        self.current = RegistrySnapshot {
            devices: Arc::new(devices),
            owners: Arc::new(owners),
            version: self.current.version + 1,
        };
    }

    pub fn records(&self) -> Vec<DeviceRecord> {
        self.current.devices.values().cloned().collect()
    }
}
