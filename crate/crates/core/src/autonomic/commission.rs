use crate::bkr::{Baseline, BaselineProvenance, Bkr, BkrError, DeviceRecord};
use crate::broker::Broker;
use crate::dnc::{discover, CandidatePoint, Classifier, ProbeWindow};
use crate::simulator::PointSpec;
use crate::stream::TransformTable;
use crate::types::{OperatingRange, Tick};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommissionError {
    #[error("no points were observed during the probe window (ticks {start}..{end}); nothing to commission")]
    EmptyBuilding { start: Tick, end: Tick },
    #[error(transparent)]
    Bkr(#[from] BkrError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckFailure {
    /// The classifier could not name the device; a human label is needed.
    Unclassified,
    /// No manufacturer specification is on file for the point.
    NoSpecification,
    /// Live values fell outside the manufacturer range.
    OutOfRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommissioningItem {
    pub device_id: String,
    pub point_id: String,
    pub class: String,
    pub confidence: f64,
    pub system: String,
    pub unit: String,
    pub range: Option<OperatingRange>,
    pub observed_min: f64,
    pub observed_max: f64,
    pub range_ok: bool,
    pub baseline: Baseline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<CheckFailure>,
    pub waived: bool,
    pub registered: bool,
}

impl CommissioningItem {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommissioningReport {
    pub run_at: Tick,
    pub probe: ProbeWindow,
    pub items: Vec<CommissioningItem>,
    pub passed: usize,
    pub failed: usize,
    pub waived: usize,
    /// Every device passed or was waived.
    pub complete: bool,
}

impl CommissioningReport {
    pub fn failures(&self) -> impl Iterator<Item = &CommissioningItem> {
        self.items.iter().filter(|i| !i.passed() && !i.waived)
    }
}

/// Everything startup commissioning needs besides the repository.
pub struct Commissioner<'a> {
    pub broker: &'a Broker,
    pub transforms: &'a TransformTable,
    pub classifier: &'a dyn Classifier,
    /// Manufacturer catalogue, keyed by point id.
    pub catalog: &'a BTreeMap<String, PointSpec>,
    /// Devices an operator has accepted despite a failed check.
    pub waivers: &'a BTreeSet<String>,
}

impl Commissioner<'_> {
    /// Discovers, classifies, range-checks and baselines every point seen in
    /// `probe`, then registers the devices that passed or were waived.
    /// Devices already registered get their record refreshed and the new
    /// baseline archived.
    pub fn run(&self, bkr: &mut Bkr, probe: ProbeWindow, now: Tick) -> Result<CommissioningReport, CommissionError> {
        let candidates = discover(self.broker, probe, self.transforms, &bkr.registry());
        if candidates.is_empty() {
            return Err(CommissionError::EmptyBuilding {
                start: probe.start_tick,
                end: probe.end_tick,
            });
        }
        let commissioned_at = probe.start_ms + (now - probe.start_tick) as i64 * probe.tick_ms;
        let mut items = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let mut item = self.check(c);
            item.waived = item.failure.is_some() && self.waivers.contains(&item.device_id);
            if item.passed() || item.waived {
                self.register(bkr, c, &item, commissioned_at, now)?;
                item.registered = true;
            }
            items.push(item);
        }
        let passed = items.iter().filter(|i| i.passed()).count();
        let waived = items.iter().filter(|i| i.waived).count();
        let failed = items.len() - passed - waived;
        Ok(CommissioningReport {
            run_at: now,
            probe,
            passed,
            failed,
            waived,
            complete: failed == 0,
            items,
        })
    }

    fn check(&self, c: &CandidatePoint) -> CommissioningItem {
        let class = self.classifier.classify(c);
        let spec = self.catalog.get(&c.point_id);
        let range = spec.map(|s| s.range);
        let range_ok = range.is_some_and(|r| r.contains(c.stats.min) && r.contains(c.stats.max));
        let failure = if !class.is_known() {
            Some(CheckFailure::Unclassified)
        } else if range.is_none() {
            Some(CheckFailure::NoSpecification)
        } else if !range_ok {
            Some(CheckFailure::OutOfRange)
        } else {
            None
        };
        CommissioningItem {
            device_id: c.device_id.clone(),
            point_id: c.point_id.clone(),
            class: class.class,
            confidence: class.confidence,
            system: spec.map_or_else(
                || c.point_id.split('/').next().unwrap_or(&c.point_id).to_string(),
                |s| s.system_id.clone(),
            ),
            unit: c.unit.clone(),
            range,
            observed_min: c.stats.min,
            observed_max: c.stats.max,
            range_ok,
            baseline: c.baseline(),
            failure,
            waived: false,
            registered: false,
        }
    }

    fn register(
        &self,
        bkr: &mut Bkr,
        c: &CandidatePoint,
        item: &CommissioningItem,
        commissioned_at: i64,
        now: Tick,
    ) -> Result<(), BkrError> {
        let spec = self.catalog.get(&c.point_id);
        let range = item
            .range
            .unwrap_or_else(|| OperatingRange::new(item.observed_min, item.observed_max));
        let rec = DeviceRecord {
            device_id: item.device_id.clone(),
            point_ids: vec![item.point_id.clone()],
            class: item.class.clone(),
            confidence: item.confidence,
            system: item.system.clone(),
            system_kind: spec.map(|s| s.system_kind),
            operating_range: range,
            unit: item.unit.clone(),
            baseline: item.baseline,
            source: c.source,
            commissioned_at,
            waived: item.waived,
        };
        if bkr.registry().get(&rec.device_id).is_some() {
            let baseline = rec.baseline;
            bkr.update_device(DeviceRecord {
                baseline: bkr.registry().get(&rec.device_id).expect("checked").baseline,
                ..rec
            })?;
            match bkr.update_baseline(&item.point_id, baseline, BaselineProvenance::StartUpCx, now) {
                Ok(()) | Err(BkrError::InsufficientData { .. }) => Ok(()),
                Err(e) => Err(e),
            }
        } else {
            bkr.register_device(rec)
        }
    }
}
