//! Vocabulary shared by every layer of the building stack.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Discrete simulated time step index. Tick 0 is the first step after boot.
pub type Tick = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quality {
    Good,
    Suspect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    Native,
    #[serde(rename = "LegacyBAS")]
    LegacyBas,
}

/// A change-of-value reading from one point: the unit of transport on the broker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorMessage {
    pub device_id: String,
    pub point_id: String,
    pub seq_no: u64,
    /// Simulated milliseconds since epoch.
    #[serde(rename = "ts")]
    pub timestamp: i64,
    pub value: f64,
    pub unit: String,
    pub quality: Quality,
    pub source: Source,
}

impl SensorMessage {
    /// Identity used for idempotent admission.
    pub fn dedup_key(&self) -> (String, String, u64) {
        (self.device_id.clone(), self.point_id.clone(), self.seq_no)
    }
}

/// Building-equipment system families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemKind {
    Zone,
    Chiller,
    AirHandler,
    Boiler,
    ShadingSystem,
    PowerSupply,
    Meter,
    BackupGenerator,
    Weather,
    Elevator,
    Security,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingRange {
    pub min: f64,
    pub max: f64,
}

impl OperatingRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Distance by which `v` lies outside the range; zero when inside.
    pub fn excess(&self, v: f64) -> f64 {
        if v < self.min {
            self.min - v
        } else if v > self.max {
            v - self.max
        } else {
            0.0
        }
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min < self.max
    }
}

/// A set-value command for one simulated actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorCommand {
    pub actuator_id: String,
    pub value: f64,
}

impl ActuatorCommand {
    pub fn new(actuator_id: impl Into<String>, value: f64) -> Self {
        Self {
            actuator_id: actuator_id.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Fault,
    ConceptDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warning,
    Critical,
}
