//! Discrete-time simulated building: equipment, sensors and actuators.
//!
//! Each zone is a first-order resistor-capacitor node
//! `T' = T + dt/C * (U*(T_out - T) + gains - cooling + heating)` held at its
//! setpoint by an ideal local controller limited by coil and plant capacity.
//! The chiller draws `load / COP` where COP is affine in the supply setpoint;
//! the supply fan is two-speed, stepping up when the required airflow exceeds
//! its low-speed capacity. Sensors report change-of-value messages only.

mod config;
mod reference;
mod scenario;

pub use config::*;
pub use reference::reference_building;
pub use scenario::*;

use crate::types::{ActuatorCommand, Quality, SensorMessage, Source, SystemKind, Tick};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Volumetric heat capacity of air, J/(m3 K).
const AIR_RHO_CP: f64 = 1206.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown actuator {0}")]
    UnknownActuator(String),
    #[error("actuator {0}: non-finite command value")]
    BadCommand(String),
    #[error("unknown injection target {0}")]
    UnknownTarget(String),
    #[error("injection on {target}: {reason}")]
    BadInjection { target: String, reason: String },
    #[error("simulation fault: non-finite state in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0:?}")]
    Config(Vec<ConfigError>),
    #[error("invalid scenario: {0:?}")]
    Scenario(Vec<ScenarioError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum SensorFault {
    Bias(f64),
    Stuck(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveInjection {
    pub kind: InjectionKind,
    pub target: String,
    pub params: InjectionParams,
    pub since: Tick,
}

#[derive(Debug, Clone, Default)]
struct CovState {
    last_value: Option<f64>,
    last_quality: Option<Quality>,
    seq: u64,
}

/// Cumulative electrical energy per component, kWh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub components: BTreeMap<String, f64>,
    /// What the building power meter integrated over the same ticks.
    pub metered_kwh: f64,
    /// Chiller + pump + fan + boiler.
    pub hvac_kwh: f64,
}

impl EnergyLedger {
    pub fn component_sum(&self) -> f64 {
        self.components.values().sum()
    }
}

/// Physical state after one tick, before sensor effects.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PlantSnapshot {
    pub tick: Tick,
    pub hour_of_day: f64,
    pub outdoor_c: f64,
    pub zone_temps: Vec<f64>,
    pub zone_cooling_kw: Vec<f64>,
    pub chiller_kw: f64,
    pub chiller_load_kw: f64,
    pub pump_kw: f64,
    pub fan_kw: f64,
    pub airflow_m3s: f64,
    pub boiler_kw: f64,
    pub building_kw: f64,
    pub powered: bool,
}

impl PlantSnapshot {
    pub fn hvac_kw(&self) -> f64 {
        self.chiller_kw + self.pump_kw + self.fan_kw + self.boiler_kw
    }
}

#[derive(Debug, Default)]
pub struct StepOutput {
    pub messages: Vec<SensorMessage>,
    /// Commands refused this tick; the world is unchanged for each of them.
    pub rejected: Vec<SimError>,
    pub warnings: Vec<String>,
    /// Scenario events applied this tick.
    pub applied: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone)]
struct ZoneState {
    temp: f64,
    setpoint: f64,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    config: Arc<SimConfig>,
    points: Arc<Vec<PointSpec>>,
    scenario: Arc<Vec<ScenarioEvent>>,
    scenario_cursor: usize,
    tick: Tick,
    zones: Vec<ZoneState>,
    comfort: Vec<ComfortBand>,
    chiller_setpoint: f64,
    cop_factor: f64,
    shading: BTreeMap<String, f64>,
    generator_running: bool,
    mains_outage: bool,
    sensor_faults: BTreeMap<String, SensorFault>,
    injections: Vec<ActiveInjection>,
    cov: Vec<CovState>,
    rng: ChaCha8Rng,
    energy: EnergyLedger,
    last: PlantSnapshot,
    emit: bool,
}

impl SimWorld {
    pub fn new(config: SimConfig, scenario: ScenarioScript) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        scenario.validate(&config).map_err(SimError::Scenario)?;
        let points = config.points();
        let zones = config
            .zones
            .iter()
            .map(|z| ZoneState {
                temp: z.initial_temp_c,
                setpoint: z.setpoint_c,
            })
            .collect();
        let comfort = config.zones.iter().map(|z| z.comfort_band).collect();
        let mut shading = BTreeMap::new();
        for s in &config.systems {
            if let SystemSpec::ShadingSystem(sh) = s {
                for f in &sh.facades {
                    shading.insert(format!("{}.position_{f}", sh.id), sh.initial_position_pct);
                }
            }
        }
        let chiller_setpoint = config.chiller().map(|c| c.setpoint_c).unwrap_or(7.0);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            cov: vec![CovState::default(); points.len()],
            points: Arc::new(points),
            scenario: Arc::new(scenario.events),
            scenario_cursor: 0,
            tick: 0,
            zones,
            comfort,
            chiller_setpoint,
            cop_factor: 1.0,
            shading,
            generator_running: false,
            mains_outage: false,
            sensor_faults: BTreeMap::new(),
            injections: Vec::new(),
            energy: EnergyLedger::default(),
            last: PlantSnapshot::default(),
            emit: true,
            config: Arc::new(config),
        })
    }

    /// A fresh plant whose clock starts at `tick`, for resuming after a
    /// restart. Scripted events before `tick` are skipped and sequence
    /// numbers continue above any the previous run could have used.
    pub fn resume_at(config: SimConfig, scenario: ScenarioScript, tick: Tick) -> Result<Self, SimError> {
        let mut w = Self::new(config, scenario)?;
        w.tick = tick;
        w.scenario_cursor = w.scenario.iter().take_while(|e| e.tick < tick).count();
        for c in &mut w.cov {
            c.seq = tick;
        }
        Ok(w)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn points(&self) -> &[PointSpec] {
        &self.points
    }

    /// Index of the next tick to be simulated.
    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn tick_ms(&self) -> i64 {
        self.config.tick_seconds as i64 * 1000
    }

    pub fn timestamp_of(&self, tick: Tick) -> i64 {
        self.config.start_ms + tick as i64 * self.tick_ms()
    }

    pub fn energy(&self) -> &EnergyLedger {
        &self.energy
    }

    pub fn last_snapshot(&self) -> &PlantSnapshot {
        &self.last
    }

    pub fn chiller_setpoint(&self) -> f64 {
        self.chiller_setpoint
    }

    pub fn cop_factor(&self) -> f64 {
        self.cop_factor
    }

    pub fn generator_running(&self) -> bool {
        self.generator_running
    }

    pub fn injections(&self) -> &[ActiveInjection] {
        &self.injections
    }

    pub fn zone_temp(&self, zone: &str) -> Option<f64> {
        let i = self.config.zones.iter().position(|z| z.id == zone)?;
        Some(self.zones[i].temp)
    }

    pub fn comfort_bands(&self) -> Vec<(String, ComfortBand)> {
        self.config
            .zones
            .iter()
            .zip(&self.comfort)
            .map(|(z, b)| (z.id.clone(), *b))
            .collect()
    }

    /// Tenant comfort adjustment; the caller enforces manager limits.
    pub fn set_comfort_band(&mut self, zone: &str, band: ComfortBand) -> bool {
        match self.config.zones.iter().position(|z| z.id == zone) {
            Some(i) => {
                self.comfort[i] = band;
                true
            }
            None => false,
        }
    }

    pub fn hour_at(&self, tick: Tick) -> f64 {
        let secs = self.config.start_ms as f64 / 1000.0 + (tick * self.config.tick_seconds) as f64;
        (secs / 3600.0).rem_euclid(24.0)
    }

    /// A physics-only copy for what-if evaluation: no sensors, no scripted
    /// events, no sensor faults or outages. Equipment drift is kept.
    pub fn twin(&self) -> SimWorld {
        let mut t = self.clone();
        t.emit = false;
        t.scenario = Arc::new(Vec::new());
        t.scenario_cursor = 0;
        t.sensor_faults.clear();
        t.mains_outage = false;
        t.generator_running = false;
        t.injections.retain(|i| i.kind == InjectionKind::DriftInjection);
        t.energy = EnergyLedger::default();
        t
    }

    fn apply_command(&mut self, cmd: &ActuatorCommand) -> Result<(), SimError> {
        if !cmd.value.is_finite() {
            return Err(SimError::BadCommand(cmd.actuator_id.clone()));
        }
        let id = cmd.actuator_id.as_str();
        if let Some(zone) = id.strip_suffix(".setpoint") {
            if let Some(i) = self.config.zones.iter().position(|z| z.id == zone) {
                self.zones[i].setpoint = cmd.value;
                return Ok(());
            }
            if self.config.chiller().is_some_and(|c| c.id == zone) {
                self.chiller_setpoint = cmd.value;
                return Ok(());
            }
        }
        if let Some(slot) = self.shading.get_mut(id) {
            *slot = cmd.value.clamp(0.0, 100.0);
            return Ok(());
        }
        if let Some(gen) = id.strip_suffix(".run") {
            if matches!(self.config.system(gen), Some(SystemSpec::BackupGenerator(_))) {
                self.generator_running = cmd.value >= 0.5;
                return Ok(());
            }
        }
        Err(SimError::UnknownActuator(cmd.actuator_id.clone()))
    }

    /// Applies one scripted injection immediately.
    pub fn inject(&mut self, ev: &ScenarioEvent) -> Result<Vec<String>, SimError> {
        let mut warnings = Vec::new();
        let system = self
            .config
            .system_of(&ev.target)
            .ok_or_else(|| SimError::UnknownTarget(ev.target.clone()))?;
        let is_point = system != ev.target;
        let bad = |reason: &str| SimError::BadInjection {
            target: ev.target.clone(),
            reason: reason.to_string(),
        };
        match ev.kind {
            InjectionKind::FaultInjection => {
                if ev.params.outage == Some(true) {
                    if self.config.system_kind_of(&system) != Some(SystemKind::PowerSupply) {
                        return Err(bad("outage requires a power-supply system"));
                    }
                    self.mains_outage = true;
                } else {
                    if !is_point {
                        return Err(bad("sensor faults target a point"));
                    }
                    let fault = match (ev.params.bias, ev.params.stuck) {
                        (Some(b), _) => SensorFault::Bias(b),
                        (None, Some(s)) => SensorFault::Stuck(s),
                        _ => return Err(bad("fault needs bias, stuck or outage")),
                    };
                    self.sensor_faults.insert(ev.target.clone(), fault);
                }
            }
            InjectionKind::DriftInjection => {
                let f = ev
                    .params
                    .cop_factor
                    .filter(|f| *f > 0.0)
                    .ok_or_else(|| bad("drift needs a positive cop_factor"))?;
                if self.config.system_kind_of(&system) != Some(SystemKind::Chiller) {
                    return Err(bad("cop drift requires a chiller"));
                }
                self.cop_factor *= f;
            }
            InjectionKind::Repair => {
                let cfg = Arc::clone(&self.config);
                let matches = |inj: &ActiveInjection| {
                    inj.kind == InjectionKind::FaultInjection
                        && (inj.target == ev.target
                            || cfg.system_of(&inj.target).as_deref() == Some(ev.target.as_str()))
                };
                let (hit, keep): (Vec<_>, Vec<_>) =
                    std::mem::take(&mut self.injections).into_iter().partition(|i| matches(i));
                self.injections = keep;
                if hit.is_empty() {
                    let w = format!("repair of {} matched no active fault", ev.target);
                    tracing::warn!("{w}");
                    warnings.push(w);
                }
                for inj in hit {
                    if inj.params.outage == Some(true) {
                        self.mains_outage = false;
                    } else {
                        self.sensor_faults.remove(&inj.target);
                    }
                }
                return Ok(warnings);
            }
        }
        self.injections.push(ActiveInjection {
            kind: ev.kind,
            target: ev.target.clone(),
            params: ev.params.clone(),
            since: self.tick,
        });
        Ok(warnings)
    }

    /// Advances one tick.
    pub fn step(&mut self, commands: &[ActuatorCommand]) -> Result<StepOutput, SimError> {
        let mut out = StepOutput::default();
        while let Some(ev) = self.scenario.get(self.scenario_cursor) {
            if ev.tick > self.tick {
                break;
            }
            let ev = ev.clone();
            self.scenario_cursor += 1;
            match self.inject(&ev) {
                Ok(w) => out.warnings.extend(w),
                Err(e) => out.warnings.push(e.to_string()),
            }
            out.applied.push(ev);
        }
        for cmd in commands {
            if let Err(e) = self.apply_command(cmd) {
                out.rejected.push(e);
            }
        }
        let snap = self.advance_physics()?;
        if self.emit {
            out.messages = self.emit_messages(&snap);
        }
        self.last = snap;
        self.tick += 1;
        Ok(out)
    }

    fn advance_physics(&mut self) -> Result<PlantSnapshot, SimError> {
        let cfg = Arc::clone(&self.config);
        let dt = cfg.tick_seconds as f64;
        let hour = self.hour_at(self.tick);
        let t_out = cfg.outdoor.temperature(hour);
        let powered = !self.mains_outage || self.generator_running;
        let chiller = cfg.chiller().filter(|_| powered);
        let boiler = cfg.systems.iter().find_map(|s| match s {
            SystemSpec::Boiler(b) if powered => Some(b),
            _ => None,
        });
        let ahu = cfg.systems.iter().find_map(|s| match s {
            SystemSpec::AirHandler(a) => Some(a),
            _ => None,
        });
        let daylight = if (6.0..18.0).contains(&hour) {
            (std::f64::consts::PI * (hour - 6.0) / 12.0).sin()
        } else {
            0.0
        };
        let t_chw = self.chiller_setpoint;

        let n = cfg.zones.len();
        let mut free = Vec::with_capacity(n);
        let mut cool = vec![0.0; n];
        let mut heat = vec![0.0; n];
        for (i, z) in cfg.zones.iter().enumerate() {
            let st = &self.zones[i];
            let mut gains = z.scheduled_gain_w(hour);
            if powered {
                gains += (z.lighting_kw + z.plug_kw) * 1000.0;
            }
            if let Some(f) = &z.facade {
                let shade = self
                    .shading
                    .iter()
                    .find(|(k, _)| k.ends_with(&format!(".position_{f}")))
                    .map(|(_, v)| *v)
                    .unwrap_or(0.0);
                gains += z.solar_peak_w * daylight * (1.0 - shade / 100.0);
            }
            let c = z.capacitance_j_per_k;
            let t_free = st.temp + dt / c * (z.conductance_w_per_k * (t_out - st.temp) + gains);
            if chiller.is_some() && t_free > st.setpoint {
                let need = c / dt * (t_free - st.setpoint);
                let cap = z.coil_ua_w_per_k * (st.temp - t_chw).max(0.0);
                cool[i] = need.min(cap);
            }
            if let Some(b) = boiler {
                let floor = st.setpoint - b.heating_deadband_c;
                if t_free < floor {
                    heat[i] = (c / dt * (floor - t_free)).min(b.capacity_kw * 1000.0);
                }
            }
            free.push(t_free);
        }
        let mut load_w: f64 = cool.iter().sum();
        if let Some(ch) = chiller {
            let cap = ch.capacity_kw * 1000.0;
            if load_w > cap {
                let s = cap / load_w;
                cool.iter_mut().for_each(|q| *q *= s);
                load_w = cap;
            }
        }
        let mut zone_temps = Vec::with_capacity(n);
        for (i, z) in cfg.zones.iter().enumerate() {
            let t = free[i] + dt / z.capacitance_j_per_k * (heat[i] - cool[i]);
            if !t.is_finite() {
                return Err(SimError::NonFinite(z.id.clone()));
            }
            self.zones[i].temp = t;
            zone_temps.push(t);
        }

        let (chiller_kw, pump_kw) = match chiller {
            Some(ch) => (
                load_w / 1000.0 / (ch.cop(t_chw) * self.cop_factor),
                ch.pump_kw,
            ),
            None => (0.0, 0.0),
        };
        let mut airflow = 0.0;
        let mut fan_kw = 0.0;
        if let Some(a) = ahu.filter(|_| powered) {
            let t_sa = t_chw + a.coil_approach_c;
            airflow = cool
                .iter()
                .zip(&zone_temps)
                .map(|(q, t)| q / (AIR_RHO_CP * (t - t_sa).max(0.5)))
                .sum();
            fan_kw = if airflow <= a.low_speed_flow_m3s {
                a.low_speed_kw
            } else {
                a.high_speed_kw
            };
        }
        let heat_w: f64 = heat.iter().sum();
        let boiler_kw = boiler.map_or(0.0, |b| heat_w / 1000.0 / b.efficiency + b.standby_kw);

        let mut components: Vec<(String, f64)> = Vec::new();
        if let Some(ch) = cfg.chiller() {
            components.push((format!("{}.compressor", ch.id), chiller_kw));
            components.push((format!("{}.pump", ch.id), pump_kw));
        }
        if let Some(a) = ahu {
            components.push((format!("{}.fan", a.id), fan_kw));
        }
        if let Some(SystemSpec::Boiler(b)) = cfg.systems.iter().find(|s| s.kind() == SystemKind::Boiler) {
            components.push((b.id.clone(), boiler_kw));
        }
        for z in &cfg.zones {
            let (l, p) = if powered { (z.lighting_kw, z.plug_kw) } else { (0.0, 0.0) };
            components.push((format!("{}.lighting", z.id), l));
            components.push((format!("{}.plug", z.id), p));
        }
        for s in &cfg.systems {
            match s {
                SystemSpec::Elevator(e) => {
                    components.push((e.id.clone(), if powered { e.power_kw } else { 0.0 }))
                }
                SystemSpec::Security(e) => components.push((e.id.clone(), e.power_kw)),
                _ => {}
            }
        }
        let building_kw: f64 = components.iter().map(|(_, p)| p).sum();
        let hours = dt / 3600.0;
        for (name, p) in &components {
            *self.energy.components.entry(name.clone()).or_insert(0.0) += p * hours;
        }
        self.energy.metered_kwh += building_kw * hours;
        self.energy.hvac_kwh += (chiller_kw + pump_kw + fan_kw + boiler_kw) * hours;

        Ok(PlantSnapshot {
            tick: self.tick,
            hour_of_day: hour,
            outdoor_c: t_out,
            zone_temps,
            zone_cooling_kw: cool.iter().map(|q| q / 1000.0).collect(),
            chiller_kw,
            chiller_load_kw: load_w / 1000.0,
            pump_kw,
            fan_kw,
            airflow_m3s: airflow,
            boiler_kw,
            building_kw,
            powered,
        })
    }

    /// True (pre-sensor) value of every point, in `points()` order.
    fn true_readings(&self, snap: &PlantSnapshot) -> Vec<f64> {
        let cfg = &self.config;
        self.points
            .iter()
            .map(|p| {
                let zone_idx = || cfg.zones.iter().position(|z| z.id == p.system_id);
                match (p.system_kind, p.quantity.as_str()) {
                    (SystemKind::Zone, "zone_temp") => zone_idx().map_or(0.0, |i| snap.zone_temps[i]),
                    (SystemKind::Zone, "cooling_kw") => zone_idx().map_or(0.0, |i| snap.zone_cooling_kw[i]),
                    (SystemKind::Zone, "lighting_kw") => match (zone_idx(), snap.powered) {
                        (Some(i), true) => cfg.zones[i].lighting_kw,
                        _ => 0.0,
                    },
                    (SystemKind::Chiller, "chw_supply_temp") => self.chiller_setpoint,
                    (SystemKind::Chiller, "chw_return_temp") => {
                        let flow = cfg.chiller().map_or(1.0, |c| c.chw_flow_kw_per_k);
                        self.chiller_setpoint + snap.chiller_load_kw / flow
                    }
                    (SystemKind::Chiller, "power_kw") => snap.chiller_kw,
                    (SystemKind::Chiller, "load_kw") => snap.chiller_load_kw,
                    (SystemKind::Chiller, "pump_kw") => snap.pump_kw,
                    (SystemKind::AirHandler, "fan_kw") => snap.fan_kw,
                    (SystemKind::AirHandler, "airflow") => snap.airflow_m3s,
                    (SystemKind::AirHandler, "supply_air_temp") => match cfg.system(&p.system_id) {
                        Some(SystemSpec::AirHandler(a)) => self.chiller_setpoint + a.coil_approach_c,
                        _ => 0.0,
                    },
                    (SystemKind::Boiler, "hw_supply_temp") => match cfg.system(&p.system_id) {
                        Some(SystemSpec::Boiler(b)) => b.supply_temp_c,
                        _ => 0.0,
                    },
                    (SystemKind::Boiler, "power_kw") => snap.boiler_kw,
                    (SystemKind::ShadingSystem, q) => {
                        let key = format!("{}.{}", p.system_id, q);
                        self.shading.get(&key).copied().unwrap_or(0.0)
                    }
                    (SystemKind::PowerSupply, q) => match cfg.system(&p.system_id) {
                        Some(SystemSpec::PowerSupply(ps)) if !self.mains_outage => {
                            if q == "voltage" {
                                ps.nominal_voltage
                            } else {
                                ps.nominal_frequency
                            }
                        }
                        _ => 0.0,
                    },
                    (SystemKind::Meter, _) => snap.building_kw,
                    (SystemKind::BackupGenerator, "output_kw") => {
                        if self.generator_running && self.mains_outage {
                            snap.building_kw
                        } else {
                            0.0
                        }
                    }
                    (SystemKind::BackupGenerator, "status") => f64::from(u8::from(self.generator_running)),
                    (SystemKind::Weather, _) => snap.outdoor_c,
                    (SystemKind::Elevator, _) => match cfg.system(&p.system_id) {
                        Some(SystemSpec::Elevator(e)) if snap.powered => e.power_kw,
                        _ => 0.0,
                    },
                    (SystemKind::Security, _) => 1.0,
                    _ => 0.0,
                }
            })
            .collect()
    }

    fn emit_messages(&mut self, snap: &PlantSnapshot) -> Vec<SensorMessage> {
        let truth = self.true_readings(snap);
        let ts = self.timestamp_of(self.tick);
        let mut out = Vec::new();
        let points = Arc::clone(&self.points);
        for (i, p) in points.iter().enumerate() {
            let mut v = truth[i];
            match self.sensor_faults.get(&p.point_id) {
                Some(SensorFault::Bias(b)) => v += b,
                Some(SensorFault::Stuck(s)) => v = *s,
                None => {}
            }
            if p.noise_sigma > 0.0 {
                let n = Normal::new(0.0, p.noise_sigma).expect("sigma validated non-negative");
                v += n.sample(&mut self.rng);
            }
            let quality = if p.mains_powered && !snap.powered {
                Quality::Suspect
            } else {
                Quality::Good
            };
            let st = &mut self.cov[i];
            let moved = match st.last_value {
                None => true,
                Some(last) => (v - last).abs() >= p.cov_threshold,
            };
            if moved || st.last_quality != Some(quality) {
                st.seq += 1;
                st.last_value = Some(v);
                st.last_quality = Some(quality);
                out.push(SensorMessage {
                    device_id: p.device_id.clone(),
                    point_id: p.point_id.clone(),
                    seq_no: st.seq,
                    timestamp: ts,
                    value: v,
                    unit: p.unit.clone(),
                    quality,
                    source: Source::Native,
                });
            }
        }
        out
    }
}
