use crate::types::Tick;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimelineKind {
    ModeChanged,
    Anomaly,
    Injection,
    CommissioningReport,
    EventRaised,
    EventResolved,
    TicketDispatched,
    TicketAcknowledged,
    TicketResolved,
    ActuatorCommand,
    OptimizationCompleted,
    BaselineUpdated,
    ComfortChanged,
}

/// One operator-visible occurrence, in the order it happened. The console's
/// event stream and the golden-run comparison both read this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub seq: u64,
    pub tick: Tick,
    pub kind: TimelineKind,
    pub subject: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl TimelineEntry {
    /// The part of an entry a golden file pins down.
    pub fn key(&self) -> (Tick, TimelineKind, &str) {
        (self.tick, self.kind, &self.subject)
    }
}
