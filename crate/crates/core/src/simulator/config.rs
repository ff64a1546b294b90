use crate::types::{OperatingRange, SystemKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const DEFAULT_COV_THRESHOLD: f64 = 0.1;

fn default_cov() -> f64 {
    DEFAULT_COV_THRESHOLD
}

fn default_period() -> f64 {
    24.0
}

fn default_peak_hour() -> f64 {
    15.0
}

/// Full description of a simulated building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulated seconds per tick.
    pub tick_seconds: u64,
    /// Simulated epoch of tick 0, in milliseconds.
    #[serde(default)]
    pub start_ms: i64,
    pub zones: Vec<ZoneSpec>,
    #[serde(default)]
    pub systems: Vec<SystemSpec>,
    pub outdoor: OutdoorModel,
    #[serde(default = "default_cov")]
    pub default_cov_threshold: f64,
    /// Per-point overrides of the change-of-value threshold.
    #[serde(default)]
    pub cov_thresholds: BTreeMap<String, f64>,
    /// Per-point Gaussian sensor-noise standard deviation, in the point's unit.
    #[serde(default)]
    pub noise: BTreeMap<String, f64>,
    /// Per-point overrides of the manufacturer operating range.
    #[serde(default)]
    pub ranges: BTreeMap<String, OperatingRange>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    pub lower: f64,
    pub upper: f64,
}

impl ComfortBand {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower && t <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainWindow {
    pub start_hour: f64,
    pub end_hour: f64,
    pub watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: String,
    pub capacitance_j_per_k: f64,
    pub conductance_w_per_k: f64,
    pub initial_temp_c: f64,
    pub setpoint_c: f64,
    /// Occupant and equipment heat not metered as electrical load.
    #[serde(default)]
    pub gain_schedule: Vec<GainWindow>,
    #[serde(default)]
    pub lighting_kw: f64,
    #[serde(default)]
    pub plug_kw: f64,
    #[serde(default)]
    pub solar_peak_w: f64,
    /// Shading facade serving this zone, if any.
    #[serde(default)]
    pub facade: Option<String>,
    /// Cooling-coil conductance between zone air and chilled water.
    #[serde(default)]
    pub coil_ua_w_per_k: f64,
    pub comfort_band: ComfortBand,
    /// Manager-configured outer limits for tenant comfort requests.
    pub comfort_limits: ComfortBand,
}

impl ZoneSpec {
    /// Scheduled non-electrical gain at hour-of-day `hour`.
    pub fn scheduled_gain_w(&self, hour: f64) -> f64 {
        self.gain_schedule
            .iter()
            .filter(|w| hour >= w.start_hour && hour < w.end_hour)
            .map(|w| w.watts)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutdoorModel {
    pub mean_c: f64,
    pub amplitude_c: f64,
    #[serde(default = "default_period")]
    pub period_hours: f64,
    /// Hour of day at which the sinusoid peaks.
    #[serde(default = "default_peak_hour")]
    pub peak_hour: f64,
}

impl OutdoorModel {
    pub fn temperature(&self, hour: f64) -> f64 {
        let phase = 2.0 * std::f64::consts::PI * (hour - self.peak_hour) / self.period_hours;
        self.mean_c + self.amplitude_c * phase.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerSpec {
    pub id: String,
    pub capacity_kw: f64,
    /// COP = cop_intercept + cop_slope * supply setpoint (°C).
    pub cop_intercept: f64,
    pub cop_slope: f64,
    /// Chilled-water loop heat capacity flow, kW per K of return-supply split.
    pub chw_flow_kw_per_k: f64,
    pub pump_kw: f64,
    pub setpoint_c: f64,
}

impl ChillerSpec {
    pub fn cop(&self, setpoint_c: f64) -> f64 {
        (self.cop_intercept + self.cop_slope * setpoint_c).max(0.5)
    }
}

/// Two-speed supply fan serving every zone coil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirHandlerSpec {
    pub id: String,
    pub coil_approach_c: f64,
    pub low_speed_flow_m3s: f64,
    pub low_speed_kw: f64,
    pub high_speed_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoilerSpec {
    pub id: String,
    pub capacity_kw: f64,
    pub efficiency: f64,
    pub standby_kw: f64,
    pub supply_temp_c: f64,
    /// Heating engages below setpoint minus this band.
    pub heating_deadband_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadingSpec {
    pub id: String,
    pub facades: Vec<String>,
    pub initial_position_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSupplySpec {
    pub id: String,
    pub nominal_voltage: f64,
    pub nominal_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: String,
    pub capacity_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLoadSpec {
    pub id: String,
    pub power_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainSpec {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SystemSpec {
    Chiller(ChillerSpec),
    AirHandler(AirHandlerSpec),
    Boiler(BoilerSpec),
    ShadingSystem(ShadingSpec),
    PowerSupply(PowerSupplySpec),
    Meter(PlainSpec),
    BackupGenerator(GeneratorSpec),
    Weather(PlainSpec),
    Elevator(FixedLoadSpec),
    Security(FixedLoadSpec),
}

impl SystemSpec {
    pub fn id(&self) -> &str {
        match self {
            SystemSpec::Chiller(s) => &s.id,
            SystemSpec::AirHandler(s) => &s.id,
            SystemSpec::Boiler(s) => &s.id,
            SystemSpec::ShadingSystem(s) => &s.id,
            SystemSpec::PowerSupply(s) => &s.id,
            SystemSpec::Meter(s) => &s.id,
            SystemSpec::BackupGenerator(s) => &s.id,
            SystemSpec::Weather(s) => &s.id,
            SystemSpec::Elevator(s) => &s.id,
            SystemSpec::Security(s) => &s.id,
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemSpec::Chiller(_) => SystemKind::Chiller,
            SystemSpec::AirHandler(_) => SystemKind::AirHandler,
            SystemSpec::Boiler(_) => SystemKind::Boiler,
            SystemSpec::ShadingSystem(_) => SystemKind::ShadingSystem,
            SystemSpec::PowerSupply(_) => SystemKind::PowerSupply,
            SystemSpec::Meter(_) => SystemKind::Meter,
            SystemSpec::BackupGenerator(_) => SystemKind::BackupGenerator,
            SystemSpec::Weather(_) => SystemKind::Weather,
            SystemSpec::Elevator(_) => SystemKind::Elevator,
            SystemSpec::Security(_) => SystemKind::Security,
        }
    }
}

/// One instrumented point as installed, including its manufacturer range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSpec {
    pub point_id: String,
    pub device_id: String,
    pub system_id: String,
    pub system_kind: SystemKind,
    pub quantity: String,
    pub unit: String,
    pub range: OperatingRange,
    /// Sensor loses trustworthy power when the building has none.
    pub mains_powered: bool,
    pub cov_threshold: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("tick_seconds must be positive")]
    TickSeconds,
    #[error("zone {0}: capacitance must be positive")]
    Capacitance(String),
    #[error("zone {0}: conductance must be positive")]
    Conductance(String),
    #[error("zone {0}: comfort band must satisfy lower < upper inside its limits")]
    ComfortBand(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("point {0}: cov threshold must be positive")]
    CovThreshold(String),
    #[error("point {0}: noise sigma must be non-negative")]
    Noise(String),
    #[error("point {0}: invalid operating range")]
    Range(String),
    #[error("{0} refers to unknown point")]
    UnknownPoint(String),
    #[error("system {0}: {1}")]
    System(String, String),
    #[error("outdoor period must be positive")]
    OutdoorPeriod,
}

pub(crate) fn point_id(system: &str, quantity: &str) -> String {
    format!("{system}/{quantity}")
}

pub(crate) fn device_id(system: &str, quantity: &str) -> String {
    format!("{system}.{quantity}")
}

impl SimConfig {
    /// Every point the building exposes, in a stable order.
    pub fn points(&self) -> Vec<PointSpec> {
        let mut out = Vec::new();
        let mut add = |system: &str, kind: SystemKind, q: &str, unit: &str, range: (f64, f64), mains: bool| {
            let pid = point_id(system, q);
            let range = self
                .ranges
                .get(&pid)
                .copied()
                .unwrap_or(OperatingRange::new(range.0, range.1));
            out.push(PointSpec {
                device_id: device_id(system, q),
                system_id: system.to_string(),
                system_kind: kind,
                quantity: q.to_string(),
                unit: unit.to_string(),
                range,
                mains_powered: mains,
                cov_threshold: self
                    .cov_thresholds
                    .get(&pid)
                    .copied()
                    .unwrap_or(self.default_cov_threshold),
                noise_sigma: self.noise.get(&pid).copied().unwrap_or(0.0),
                point_id: pid,
            });
        };
        for z in &self.zones {
            add(&z.id, SystemKind::Zone, "zone_temp", "°C", (10.0, 35.0), true);
            add(&z.id, SystemKind::Zone, "cooling_kw", "kWth", (0.0, 20.0), true);
            add(&z.id, SystemKind::Zone, "lighting_kw", "kW", (0.0, 5.0), true);
        }
        for s in &self.systems {
            let id = s.id();
            let k = s.kind();
            match s {
                SystemSpec::Chiller(c) => {
                    add(id, k, "chw_supply_temp", "°C", (4.0, 15.0), true);
                    add(id, k, "chw_return_temp", "°C", (6.0, 20.0), true);
                    add(id, k, "power_kw", "kW", (0.0, 60.0), true);
                    add(id, k, "load_kw", "kWth", (0.0, c.capacity_kw), true);
                    add(id, k, "pump_kw", "kW", (0.0, 5.0), true);
                }
                SystemSpec::AirHandler(_) => {
                    add(id, k, "fan_kw", "kW", (0.0, 20.0), true);
                    add(id, k, "airflow", "m3/s", (0.0, 12.0), true);
                    add(id, k, "supply_air_temp", "°C", (6.0, 20.0), true);
                }
                SystemSpec::Boiler(_) => {
                    add(id, k, "hw_supply_temp", "°C", (40.0, 90.0), true);
                    add(id, k, "power_kw", "kW", (0.0, 100.0), true);
                }
                SystemSpec::ShadingSystem(sh) => {
                    for f in &sh.facades {
                        add(id, k, &format!("position_{f}"), "%", (0.0, 100.0), true);
                    }
                }
                SystemSpec::PowerSupply(p) => {
                    let v = p.nominal_voltage;
                    let hz = p.nominal_frequency;
                    add(id, k, "voltage", "V", (0.9 * v, 1.1 * v), false);
                    add(id, k, "frequency", "Hz", (hz - 0.5, hz + 0.5), false);
                }
                SystemSpec::Meter(_) => add(id, k, "building_kw", "kW", (0.0, 200.0), false),
                SystemSpec::BackupGenerator(g) => {
                    add(id, k, "output_kw", "kW", (0.0, g.capacity_kw), false);
                    add(id, k, "status", "state", (0.0, 1.0), false);
                }
                SystemSpec::Weather(_) => add(id, k, "outdoor_temp", "°C", (-30.0, 45.0), true),
                SystemSpec::Elevator(_) => add(id, k, "power_kw", "kW", (0.0, 10.0), true),
                SystemSpec::Security(_) => add(id, k, "status", "state", (0.0, 1.0), false),
            }
        }
        out
    }

    /// Actuator ids accepted by `step`.
    pub fn actuators(&self) -> Vec<String> {
        let mut out: Vec<String> = self.zones.iter().map(|z| format!("{}.setpoint", z.id)).collect();
        for s in &self.systems {
            match s {
                SystemSpec::Chiller(c) => out.push(format!("{}.setpoint", c.id)),
                SystemSpec::ShadingSystem(sh) => {
                    out.extend(sh.facades.iter().map(|f| format!("{}.position_{f}", sh.id)))
                }
                SystemSpec::BackupGenerator(g) => out.push(format!("{}.run", g.id)),
                _ => {}
            }
        }
        out
    }

    pub fn system(&self, id: &str) -> Option<&SystemSpec> {
        self.systems.iter().find(|s| s.id() == id)
    }

    pub fn chiller(&self) -> Option<&ChillerSpec> {
        self.systems.iter().find_map(|s| match s {
            SystemSpec::Chiller(c) => Some(c),
            _ => None,
        })
    }

    pub fn zone(&self, id: &str) -> Option<&ZoneSpec> {
        self.zones.iter().find(|z| z.id == id)
    }

    /// System id owning `target`, which may be a system id or a point id.
    pub fn system_of(&self, target: &str) -> Option<String> {
        if self.zone(target).is_some() || self.system(target).is_some() {
            return Some(target.to_string());
        }
        self.points()
            .into_iter()
            .find(|p| p.point_id == target)
            .map(|p| p.system_id)
    }

    pub fn system_kind_of(&self, system_id: &str) -> Option<SystemKind> {
        if self.zone(system_id).is_some() {
            return Some(SystemKind::Zone);
        }
        self.system(system_id).map(SystemSpec::kind)
    }

    /// Reports every violated invariant rather than stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut errs = Vec::new();
        if self.tick_seconds == 0 {
            errs.push(ConfigError::TickSeconds);
        }
        if !(self.outdoor.period_hours > 0.0) {
            errs.push(ConfigError::OutdoorPeriod);
        }
        let mut ids = BTreeSet::new();
        for z in &self.zones {
            if !ids.insert(z.id.clone()) {
                errs.push(ConfigError::DuplicateId(z.id.clone()));
            }
            if !(z.capacitance_j_per_k > 0.0) {
                errs.push(ConfigError::Capacitance(z.id.clone()));
            }
            if !(z.conductance_w_per_k > 0.0) {
                errs.push(ConfigError::Conductance(z.id.clone()));
            }
            let b = z.comfort_band;
            let l = z.comfort_limits;
            if !(b.lower < b.upper && l.lower <= b.lower && b.upper <= l.upper) {
                errs.push(ConfigError::ComfortBand(z.id.clone()));
            }
        }
        for s in &self.systems {
            if !ids.insert(s.id().to_string()) {
                errs.push(ConfigError::DuplicateId(s.id().to_string()));
            }
            match s {
                SystemSpec::Chiller(c) => {
                    if !(c.capacity_kw > 0.0) {
                        errs.push(ConfigError::System(c.id.clone(), "capacity must be positive".into()));
                    }
                    if !(c.chw_flow_kw_per_k > 0.0) {
                        errs.push(ConfigError::System(c.id.clone(), "chilled-water flow must be positive".into()));
                    }
                }
                SystemSpec::Boiler(b) if !(b.efficiency > 0.0 && b.efficiency <= 1.0) => {
                    errs.push(ConfigError::System(b.id.clone(), "efficiency must be in (0, 1]".into()));
                }
                _ => {}
            }
        }
        let points = self.points();
        let known: BTreeSet<&str> = points.iter().map(|p| p.point_id.as_str()).collect();
        for p in &points {
            if !(p.cov_threshold > 0.0) {
                errs.push(ConfigError::CovThreshold(p.point_id.clone()));
            }
            if !(p.noise_sigma >= 0.0) {
                errs.push(ConfigError::Noise(p.point_id.clone()));
            }
            if !p.range.is_valid() {
                errs.push(ConfigError::Range(p.point_id.clone()));
            }
        }
        if !(self.default_cov_threshold > 0.0) {
            errs.push(ConfigError::CovThreshold("<default>".into()));
        }
        for key in self
            .cov_thresholds
            .keys()
            .chain(self.noise.keys())
            .chain(self.ranges.keys())
        {
            if !known.contains(key.as_str()) {
                errs.push(ConfigError::UnknownPoint(key.clone()));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}
