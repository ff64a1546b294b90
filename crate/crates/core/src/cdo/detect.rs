use crate::bkr::{DeviceRecord, RegistrySnapshot};
use crate::stream::StateVector;
use crate::types::{EventKind, Quality, Severity, SystemKind, Tick};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub point_id: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub event_id: String,
    pub kind: EventKind,
    /// System id the change is attributed to.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_kind: Option<SystemKind>,
    pub detected_at: Tick,
    pub evidence: Evidence,
    pub severity: Severity,
}

pub const RANGE_VIOLATION: &str = "range_excess";
pub const QUALITY_COLLAPSE: &str = "suspect_fraction";
pub const MEAN_SHIFT: &str = "mean_shift";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub window: usize,
    pub k: f64,
    pub persistence: u32,
    pub max_suspect_fraction: f64,
    /// Smallest mean shift treated as drift, per device class. Also used
    /// alone when a baseline has zero spread.
    #[serde(default)]
    pub min_shift: BTreeMap<String, f64>,
    pub default_min_shift: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window: 30,
            k: 4.0,
            persistence: 10,
            max_suspect_fraction: 0.5,
            min_shift: BTreeMap::new(),
            default_min_shift: 0.2,
        }
    }
}

/// Seam for alternative change detectors.
pub trait ChangeDetector {
    fn observe(&mut self, sv: &StateVector, registry: &RegistrySnapshot) -> Vec<ChangeEvent>;
}

#[derive(Debug, Default, Clone)]
struct PointState {
    window: VecDeque<(f64, Quality)>,
    streak: u32,
}

/// Range/quality fault detector plus windowed z-score drift detector.
#[derive(Debug, Clone)]
pub struct Detector {
    pub config: DetectorConfig,
    points: BTreeMap<String, PointState>,
    open: BTreeMap<(String, EventKind), String>,
    drift_suppressed_points: BTreeSet<String>,
    drift_suppressed_all: bool,
    degenerate_warned: BTreeSet<String>,
    next_id: u64,
    evaluations: u64,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            points: BTreeMap::new(),
            open: BTreeMap::new(),
            drift_suppressed_points: BTreeSet::new(),
            drift_suppressed_all: false,
            degenerate_warned: BTreeSet::new(),
            next_id: 1,
            evaluations: 0,
        }
    }

    /// Continues event numbering after a restart.
    pub fn set_next_id(&mut self, next: u64) {
        self.next_id = self.next_id.max(next);
    }

    /// Point-windows evaluated with a full window so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn is_open(&self, target: &str, kind: EventKind) -> bool {
        self.open.contains_key(&(target.to_string(), kind))
    }

    pub fn open_events(&self) -> Vec<String> {
        self.open.values().cloned().collect()
    }

    /// Re-registers an event that is still open after a restart.
    pub fn mark_open(&mut self, target: &str, kind: EventKind, event_id: &str) {
        self.open.insert((target.to_string(), kind), event_id.to_string());
    }

    /// Marks an event resolved so the same change may fire again later.
    pub fn close(&mut self, target: &str, kind: EventKind) {
        self.open.remove(&(target.to_string(), kind));
    }

    pub fn suppress_drift_everywhere(&mut self, on: bool) {
        self.drift_suppressed_all = on;
    }

    pub fn set_drift_suppressed(&mut self, points: impl IntoIterator<Item = String>) {
        self.drift_suppressed_points = points.into_iter().collect();
    }

    pub fn unsuppress_drift(&mut self, point: &str) {
        self.drift_suppressed_points.remove(point);
    }

    pub fn drift_suppressed(&self) -> &BTreeSet<String> {
        &self.drift_suppressed_points
    }

    pub fn reset_windows(&mut self) {
        self.points.clear();
    }

    pub fn reset_system(&mut self, registry: &RegistrySnapshot, system: &str) {
        for (p, rec) in registry.points() {
            if rec.system == system {
                self.points.remove(p);
            }
        }
    }

    fn min_shift(&self, rec: &DeviceRecord) -> f64 {
        self.config
            .min_shift
            .get(&rec.class)
            .copied()
            .unwrap_or(self.config.default_min_shift)
    }

    fn event(&mut self, kind: EventKind, rec: &DeviceRecord, tick: Tick, evidence: Evidence) -> Option<ChangeEvent> {
        let key = (rec.system.clone(), kind);
        if self.open.contains_key(&key) {
            return None;
        }
        let event_id = format!("ev-{:04}", self.next_id);
        self.next_id += 1;
        self.open.insert(key, event_id.clone());
        let severity = match (kind, rec.system_kind) {
            (EventKind::Fault, Some(SystemKind::PowerSupply)) => Severity::Critical,
            (EventKind::Fault, _) => Severity::Warning,
            (EventKind::ConceptDrift, _) => Severity::Info,
        };
        Some(ChangeEvent {
            event_id,
            kind,
            target: rec.system.clone(),
            system_kind: rec.system_kind,
            detected_at: tick,
            evidence,
            severity,
        })
    }
}

impl ChangeDetector for Detector {
    fn observe(&mut self, sv: &StateVector, registry: &RegistrySnapshot) -> Vec<ChangeEvent> {
        let n = self.config.window;
        let mut out = Vec::new();
        for (point, rec) in registry.points() {
            let Some(pv) = sv.values.get(point) else {
                continue;
            };
            let st = self.points.entry(point.clone()).or_default();
            st.window.push_back((pv.value, pv.quality));
            if st.window.len() > n {
                st.window.pop_front();
            }
            if st.window.len() < n {
                continue;
            }
            self.evaluations += 1;
            let range = rec.operating_range;
            let mean = st.window.iter().map(|(v, _)| v).sum::<f64>() / n as f64;
            let excess = st
                .window
                .iter()
                .map(|(v, _)| range.excess(*v))
                .fold(range.excess(mean), f64::max);
            let suspect = st.window.iter().filter(|(_, q)| *q == Quality::Suspect).count() as f64 / n as f64;

            let fault = if excess > 0.0 {
                Some(Evidence {
                    point_id: point.clone(),
                    statistic: RANGE_VIOLATION.into(),
                    value: excess,
                    threshold: 0.0,
                    window: n,
                })
            } else if suspect > self.config.max_suspect_fraction {
                Some(Evidence {
                    point_id: point.clone(),
                    statistic: QUALITY_COLLAPSE.into(),
                    value: suspect,
                    threshold: self.config.max_suspect_fraction,
                    window: n,
                })
            } else {
                None
            };
            if let Some(ev) = fault {
                st.streak = 0;
                if let Some(e) = self.event(EventKind::Fault, rec, sv.tick, ev) {
                    out.push(e);
                }
                continue;
            }

            if self.drift_suppressed_all || self.drift_suppressed_points.contains(point) {
                st.streak = 0;
                continue;
            }
            let b = rec.baseline;
            let floor = self.min_shift(rec);
            if b.std == 0.0 && self.degenerate_warned.insert(point.clone()) {
                tracing::debug!(point = %point, "zero-spread baseline, using absolute shift tolerance {floor}");
            }
            let threshold = (self.config.k * b.std).max(floor);
            let shift = (mean - b.mean).abs();
            let st = self.points.get_mut(point).expect("inserted above");
            if shift > threshold {
                st.streak += 1;
            } else {
                st.streak = 0;
            }
            if st.streak >= self.config.persistence {
                st.streak = 0;
                let ev = Evidence {
                    point_id: point.clone(),
                    statistic: MEAN_SHIFT.into(),
                    value: shift,
                    threshold,
                    window: n,
                };
                if let Some(e) = self.event(EventKind::ConceptDrift, rec, sv.tick, ev) {
                    out.push(e);
                }
            }
        }
        out
    }
}
