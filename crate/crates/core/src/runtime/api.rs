use super::*;
use crate::interfacing::TicketError;
use crate::simulator::ComfortBand;
use serde::de::DeserializeOwned;

pub const REQUESTS_LOG: &str = "requests";
/// Remembered request ids; older ones age out first.
pub const REQUEST_CACHE: usize = 4096;
/// Longest single advance accepted over the API.
pub const MAX_ADVANCE: u64 = 100_000;

pub const REPORTS: [&str; 8] = [
    "status",
    "energy",
    "events",
    "tickets",
    "inventory",
    "mode-history",
    "commissioning",
    "timeline",
];

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Ticket(#[from] TicketError),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unsupported report {name}; supported: {}", supported.join(", "))]
    UnsupportedReport { name: String, supported: Vec<String> },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl ApiError {
    pub fn storage(e: impl std::fmt::Display) -> Self {
        Self::Storage(e.to_string())
    }

    /// Whether the building itself is in trouble rather than the request.
    pub fn is_internal(&self) -> bool {
        matches!(self, Self::Storage(_) | Self::Runtime(_))
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Bkr(e) => Self::Storage(e.to_string()),
            e => Self::Runtime(e.to_string()),
        }
    }
}

/// Who is asking and under which retry key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestContext {
    pub actor: String,
    pub request_id: Option<String>,
}

impl RequestContext {
    pub fn new(actor: impl Into<String>, request_id: Option<String>) -> Self {
        Self {
            actor: actor.into(),
            request_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CachedResponse {
    request_id: String,
    operation: String,
    result: Result<serde_json::Value, ApiError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaiverOutcome {
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commissioning: Option<CommissioningStatus>,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub schema: u32,
    pub ticks: Tick,
    pub hours: f64,
    /// Integrated from the meter telemetry stored in the repository.
    pub repository_metered_kwh: f64,
    /// Ticks of meter telemetry the repository figure covers.
    pub repository_ticks: u64,
    /// The simulator's own accounting of the same meter.
    pub plant_metered_kwh: f64,
    pub hvac_kwh: f64,
    pub components: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryRow {
    pub device_id: String,
    pub point_id: String,
    pub class: String,
    pub system: String,
    pub unit: String,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

/// Recent request outcomes, keyed by client request id.
#[derive(Debug, Default)]
pub(crate) struct RequestCache {
    order: std::collections::VecDeque<String>,
    entries: BTreeMap<String, CachedResponse>,
}

impl RequestCache {
    fn get(&self, id: &str) -> Option<&CachedResponse> {
        self.entries.get(id)
    }

    fn insert(&mut self, r: CachedResponse) {
        if self.entries.insert(r.request_id.clone(), r.clone()).is_none() {
            self.order.push_back(r.request_id);
        }
        while self.order.len() > REQUEST_CACHE {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
    }
}

impl Building {
    pub(crate) fn restore_requests(&mut self) -> Result<(), RuntimeError> {
        for r in self.bkr.hist.records::<CachedResponse>(REQUESTS_LOG)? {
            self.requests.insert(r);
        }
        Ok(())
    }

    /// Runs `op` once per request id; a retry returns the first outcome.
    fn once<T, F>(&mut self, ctx: &RequestContext, operation: &str, op: F) -> Result<T, ApiError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&mut Self) -> Result<T, ApiError>,
    {
        let Some(rid) = ctx.request_id.clone() else {
            return op(self);
        };
        if let Some(c) = self.requests.get(&rid) {
            if c.operation != operation {
                return Err(ApiError::Conflict(format!(
                    "request id {rid} was already used for {}",
                    c.operation
                )));
            }
            return match &c.result {
                Ok(v) => serde_json::from_value(v.clone()).map_err(|e| ApiError::Runtime(e.to_string())),
                Err(e) => Err(e.clone()),
            };
        }
        let result = op(self);
        if result.as_ref().is_err_and(ApiError::is_internal) {
            return result;
        }
        let cached = CachedResponse {
            request_id: rid,
            operation: operation.to_string(),
            result: result
                .as_ref()
                .map(|v| serde_json::to_value(v).unwrap_or_default())
                .map_err(Clone::clone),
        };
        self.bkr.hist.append(REQUESTS_LOG, &cached).map_err(ApiError::storage)?;
        self.requests.insert(cached);
        result
    }

    /// The tick stamped on actions taken between steps: the last one run.
    fn action_tick(&self) -> Tick {
        self.tick().saturating_sub(1)
    }

    pub fn status(&self) -> StatusReport {
        let open_events: Vec<String> = self.events.values().filter(|e| e.is_open()).map(|e| e.event.event_id.clone()).collect();
        StatusReport {
            schema: SCHEMA_VERSION,
            tick: self.tick(),
            mode: self.owner.state().clone(),
            open_faults: self
                .events
                .values()
                .filter(|e| e.is_open() && e.event.kind == EventKind::Fault)
                .count(),
            open_events,
            open_tickets: self
                .tickets
                .all()
                .filter(|t| t.status != TicketStatus::Resolved)
                .map(|t| t.ticket_id.clone())
                .collect(),
            registry_devices: self.bkr.registry().len(),
            commissioning: self.cx.report.as_ref().map(CommissioningStatus::from),
            metered_kwh: self.world.energy().metered_kwh,
            optimizations: self.optimizations,
            schedules: self.schedules.clone(),
            zones: self
                .world
                .comfort_bands()
                .into_iter()
                .map(|(zone, band)| ZoneStatus {
                    temp_c: self.world.zone_temp(&zone),
                    zone,
                    band,
                })
                .collect(),
            timeline_seq: self.timeline.len() as u64,
        }
    }

    pub fn acknowledge(&mut self, ctx: &RequestContext, ticket: &str) -> Result<ActionTicket, ApiError> {
        let ticket = ticket.to_string();
        let actor = ctx.actor.clone();
        self.once(ctx, "acknowledge", move |b| {
            let t = b.action_tick();
            b.acknowledge_at(&ticket, &actor, t)
        })
    }

    pub fn resolve(&mut self, ctx: &RequestContext, ticket: &str, resolution: Resolution) -> Result<ActionTicket, ApiError> {
        let ticket = ticket.to_string();
        let actor = ctx.actor.clone();
        self.once(ctx, "resolve", move |b| {
            let t = b.action_tick();
            b.resolve_at(&ticket, resolution, &actor, t)
        })
    }

    /// Accepts a device that failed commissioning as it is.
    pub fn waive(&mut self, ctx: &RequestContext, device: &str) -> Result<WaiverOutcome, ApiError> {
        let device = device.to_string();
        let actor = ctx.actor.clone();
        self.once(ctx, "waive", move |b| {
            if actor.trim().is_empty() {
                return Err(TicketError::Anonymous.into());
            }
            if actor != ESCALATION_ACTOR && actor != crate::interfacing::OPERATOR {
                return Err(ApiError::Conflict(format!("{actor} may not waive commissioning checks")));
            }
            if !b.catalog.values().any(|p| p.device_id == device) && b.bkr.registry().get(&device).is_none() {
                return Err(ApiError::NotFound(format!("device {device}")));
            }
            let t = b.action_tick();
            let source = format!("cx:{device}");
            let open = b
                .tickets
                .for_event(&source)
                .find(|tk| tk.status != TicketStatus::Resolved)
                .cloned();
            let ticket = match open {
                Some(tk) => {
                    if tk.status == TicketStatus::Dispatched {
                        b.acknowledge_at(&tk.ticket_id, &actor, t)?;
                    }
                    b.resolve_at(&tk.ticket_id, Resolution::Waived, &actor, t)?;
                    Some(tk.ticket_id)
                }
                None => {
                    b.after_commissioning_ticket(&device, Resolution::Waived, t)?;
                    None
                }
            };
            Ok(WaiverOutcome {
                device_id: device,
                ticket,
                commissioning: b.cx.report.as_ref().map(CommissioningStatus::from),
                mode: b.owner.mode(),
            })
        })
    }

    /// A tenant's comfort-band request, clamped to the manager's limits.
    pub fn comfort(&mut self, ctx: &RequestContext, zone: &str, requested: ComfortBand) -> Result<ComfortRequest, ApiError> {
        let zone = zone.to_string();
        let actor = ctx.actor.clone();
        self.once(ctx, "comfort", move |b| {
            if actor.trim().is_empty() {
                return Err(TicketError::Anonymous.into());
            }
            if !(requested.lower.is_finite() && requested.upper.is_finite()) || requested.lower >= requested.upper {
                return Err(ApiError::BadRequest("comfort band needs finite lower < upper".into()));
            }
            let Some(limits) = b.cfg.sim.zone(&zone).map(|z| z.comfort_limits) else {
                return Err(ApiError::NotFound(format!("zone {zone}")));
            };
            let mut applied = ComfortBand {
                lower: requested.lower.clamp(limits.lower, limits.upper),
                upper: requested.upper.clamp(limits.lower, limits.upper),
            };
            let min_width = b.cfg.runtime.min_comfort_width;
            if applied.upper - applied.lower < min_width {
                let mid = ((applied.lower + applied.upper) / 2.0)
                    .clamp(limits.lower + min_width / 2.0, limits.upper - min_width / 2.0);
                applied = ComfortBand {
                    lower: mid - min_width / 2.0,
                    upper: mid + min_width / 2.0,
                };
            }
            b.world.set_comfort_band(&zone, applied);
            let t = b.action_tick();
            let req = ComfortRequest {
                tick: t,
                actor,
                zone: zone.clone(),
                requested,
                applied,
                clamped: applied != requested,
            };
            b.bkr.hist.append(COMFORT_LOG, &req).map_err(ApiError::storage)?;
            b.note(
                t,
                TimelineKind::ComfortChanged,
                format!("{zone} {:.1}..{:.1}", applied.lower, applied.upper),
                serde_json::to_value(&req).unwrap_or_default(),
            )?;
            Ok(req)
        })
    }

    /// Runs commissioning now over the telemetry gathered since the probe
    /// started, instead of waiting for the full probe horizon.
    pub fn commission(&mut self, ctx: &RequestContext) -> Result<CommissioningStatus, ApiError> {
        self.once(ctx, "commission", |b| {
            if b.owner.mode() != Mode::Initializing {
                return Err(ApiError::Conflict(format!("building is {}, not Initializing", b.owner.mode())));
            }
            if b.tick() <= b.cx.probe_start {
                return Err(ApiError::Conflict("no telemetry gathered yet".into()));
            }
            let t = b.action_tick();
            b.cx.blocked = false;
            let r = b.commission_now(t)?;
            Ok(CommissioningStatus::from(&r))
        })
    }

    pub fn advance(&mut self, ctx: &RequestContext, ticks: u64) -> Result<StatusReport, ApiError> {
        self.once(ctx, "advance", move |b| {
            if ticks == 0 || ticks > MAX_ADVANCE {
                return Err(ApiError::BadRequest(format!("ticks must be within 1..={MAX_ADVANCE}")));
            }
            b.run(ticks)?;
            Ok(b.status())
        })
    }

    pub fn energy_report(&self) -> EnergyReport {
        let tick_h = self.cfg.sim.tick_seconds as f64 / 3600.0;
        let meters: BTreeSet<String> = self
            .catalog
            .values()
            .filter(|p| p.system_kind == SystemKind::Meter && p.unit == "kW")
            .map(|p| p.point_id.clone())
            .collect();
        let wm = self.bkr.hist.watermark().exported_to;
        let archived: f64 = self
            .bkr
            .hist
            .aggregates()
            .iter()
            .filter(|a| meters.contains(&a.point_id))
            .map(|a| a.mean * a.count as f64 * tick_h)
            .sum();
        let archived_ticks: u64 = self
            .bkr
            .hist
            .aggregates()
            .iter()
            .filter(|a| meters.contains(&a.point_id))
            .map(|a| a.count)
            .sum();
        let mut recent_ticks = 0;
        let mut recent = 0.0;
        for sv in self.bkr.rt.iter().filter(|sv| sv.tick >= wm) {
            let kw: Vec<f64> = meters.iter().filter_map(|m| sv.value(m)).collect();
            if !kw.is_empty() {
                recent_ticks += 1;
                recent += kw.iter().sum::<f64>() * tick_h;
            }
        }
        let e = self.world.energy();
        EnergyReport {
            schema: SCHEMA_VERSION,
            ticks: self.tick(),
            hours: self.tick() as f64 * tick_h,
            repository_metered_kwh: archived + recent,
            repository_ticks: archived_ticks / meters.len().max(1) as u64 + recent_ticks,
            plant_metered_kwh: e.metered_kwh,
            hvac_kwh: e.hvac_kwh,
            components: e.components.clone(),
        }
    }

    pub fn inventory(&self) -> Vec<InventoryRow> {
        self.bkr
            .registry()
            .points()
            .map(|(p, d)| InventoryRow {
                device_id: d.device_id.clone(),
                point_id: p.clone(),
                class: d.class.clone(),
                system: d.system.clone(),
                unit: d.unit.clone(),
                baseline_mean: d.baseline.mean,
                baseline_std: d.baseline.std,
            })
            .collect()
    }

    /// Answers a named self-description query. Reports have no side effects.
    pub fn describe(&self, name: &str) -> Result<serde_json::Value, ApiError> {
        let v = match name {
            "status" => serde_json::to_value(self.status()),
            "energy" => serde_json::to_value(self.energy_report()),
            "events" => serde_json::to_value(self.event_records()),
            "tickets" => serde_json::to_value(self.ticket_list()),
            "inventory" => serde_json::to_value(self.inventory()),
            "mode-history" => serde_json::to_value(self.journal()),
            "commissioning" => serde_json::to_value(self.cx.report.as_ref()),
            "timeline" => serde_json::to_value(&self.timeline),
            _ => {
                return Err(ApiError::UnsupportedReport {
                    name: name.to_string(),
                    supported: REPORTS.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        v.map_err(|e| ApiError::Runtime(e.to_string()))
    }
}
