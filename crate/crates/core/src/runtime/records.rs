use crate::autonomic::{BuildingMode, CommissioningReport};
use crate::bkr::SelfHealAction;
use crate::cdo::{ChangeEvent, ParameterSchedule};
use crate::interfacing::Resolution;
use crate::simulator::ComfortBand;
use crate::types::{ActuatorCommand, Tick};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventStatus {
    Open,
    Resolved,
}

/// A detected change together with everything done about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(flatten)]
    pub event: ChangeEvent,
    pub status: EventStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    #[serde(default)]
    pub tickets: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub self_heal: Vec<ActuatorCommand>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_resolve: Vec<SelfHealAction>,
    #[serde(default)]
    pub escalated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<String>,
}

impl EventRecord {
    pub fn is_open(&self) -> bool {
        self.status == EventStatus::Open
    }
}

/// Audit chain of one ongoing-commissioning cycle: the trigger, the
/// confirming ticket, the re-optimization and the baseline refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcxChain {
    pub chain_id: String,
    pub trigger: String,
    pub system: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<String>,
    pub opened_at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimized_at: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_kwh: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_updated_at: Option<Tick>,
    #[serde(default)]
    pub baseline_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStatus {
    pub zone: String,
    pub temp_c: Option<f64>,
    pub band: ComfortBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommissioningStatus {
    pub passed: usize,
    pub failed: usize,
    pub waived: usize,
    pub complete: bool,
    pub run_at: Tick,
}

impl From<&CommissioningReport> for CommissioningStatus {
    fn from(r: &CommissioningReport) -> Self {
        Self {
            passed: r.passed,
            failed: r.failed,
            waived: r.waived,
            complete: r.complete,
            run_at: r.run_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub schema: u32,
    pub tick: Tick,
    pub mode: BuildingMode,
    pub open_faults: usize,
    pub open_events: Vec<String>,
    pub open_tickets: Vec<String>,
    pub registry_devices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commissioning: Option<CommissioningStatus>,
    pub metered_kwh: f64,
    pub optimizations: u64,
    pub schedules: BTreeMap<String, ParameterSchedule>,
    pub zones: Vec<ZoneStatus>,
    pub timeline_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortRequest {
    pub tick: Tick,
    pub actor: String,
    pub zone: String,
    pub requested: ComfortBand,
    pub applied: ComfortBand,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub ticks: Tick,
    pub final_mode: BuildingMode,
    pub events: Vec<EventRecord>,
    pub tickets: Vec<crate::interfacing::ActionTicket>,
    pub mode_history: Vec<crate::autonomic::JournalEntry>,
    pub metered_kwh: f64,
    pub hvac_kwh: f64,
    pub optimizations: u64,
    pub quarantined: u64,
}
