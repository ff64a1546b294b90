//! One running building: the simulated plant, the broker, the stream
//! engine, the knowledge repository, change detection and optimization,
//! the mode owner and the interfacing layer, advanced together one tick at
//! a time.

mod api;
mod records;
mod timeline;

pub use api::*;
pub use records::*;
pub use timeline::*;

use crate::autonomic::{
    CommissionError, Commissioner, CommissioningReport, CheckFailure, Mode, ModeOwner, Outcome, Stimulus,
};
use crate::bkr::{
    validate_rules, Baseline, BaselineProvenance, Bkr, BkrConfig, BkrError, Rule, TicketKind,
};
use crate::broker::{Broker, BrokerError, Cursor};
use crate::cdo::{
    etl_cycle, optimize, ChangeDetector, ChangeEvent, Detector, DetectorConfig, HourWindow, OptOutcome,
    OptimizerConfig, ParameterSchedule, SearchSpace, TwinEvaluator,
};
use crate::dnc::{ProbeWindow, RuleClassifier};
use crate::interfacing::{
    default_actors, default_rules, plan, ActionTicket, ActorDirectory, NewTicket, Resolution, ScriptStep,
    TicketCommand, TicketStatus, TicketStore, ESCALATION_ACTOR,
};
use crate::simulator::{
    InjectionKind, PointSpec, ScenarioEvent, ScenarioScript, SimConfig, SimError, SimWorld, SystemSpec,
};
use crate::stream::{StreamEngine, StreamError, TransformTable};
use crate::types::{ActuatorCommand, EventKind, SystemKind, Tick};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const STREAM_CONSUMER: &str = "stream-engine";
pub const TOPICS: [&str; 4] = ["hvac", "power", "envelope", "services"];

pub const MODE_JOURNAL_LOG: &str = "mode_journal";
pub const TIMELINE_LOG: &str = "timeline";
pub const EVENTS_LOG: &str = "events";
pub const TICKETS_LOG: &str = "tickets";
pub const AUDIT_LOG: &str = "ticket_audit";
pub const SCHEDULES_LOG: &str = "schedules";
pub const COMMISSIONING_LOG: &str = "commissioning";
pub const OCX_LOG: &str = "ocx_chains";
pub const COMFORT_LOG: &str = "comfort_requests";
pub const WAIVERS_LOG: &str = "waivers";

/// Broker topic carrying a system family's telemetry.
pub fn topic_for(kind: SystemKind) -> &'static str {
    use SystemKind::*;
    match kind {
        Zone | Chiller | AirHandler | Boiler => "hvac",
        PowerSupply | Meter | BackupGenerator => "power",
        ShadingSystem | Weather => "envelope",
        Elevator | Security => "services",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Ticks of telemetry gathered before start-up commissioning.
    pub probe_ticks: u64,
    /// Ticks of fresh data a baseline is recaptured from after a change.
    pub rebaseline_ticks: u64,
    /// Ticks an open fault may wait before the manager is escalated to.
    pub watchdog_ticks: u64,
    pub detector: DetectorConfig,
    pub optimizer: OptimizerConfig,
    /// Declared search spaces; `None` derives one per chiller.
    pub search_spaces: Option<Vec<SearchSpace>>,
    pub bkr: BkrConfig,
    /// Maintenance actors wait for a human instead of acting on a script.
    pub hold_maintenance: bool,
    /// Narrowest comfort band a tenant may ask for, in °C.
    pub min_comfort_width: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            probe_ticks: 1440,
            rebaseline_ticks: 1440,
            watchdog_ticks: 720,
            detector: DetectorConfig::default(),
            optimizer: OptimizerConfig::default(),
            search_spaces: None,
            bkr: BkrConfig::default(),
            hold_maintenance: false,
            min_comfort_width: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingConfig {
    pub sim: SimConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<Rule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actors: Option<ActorDirectory>,
    #[serde(default)]
    pub transforms: TransformTable,
}

impl BuildingConfig {
    pub fn reference() -> Self {
        Self {
            sim: crate::simulator::reference_building(),
            runtime: RuntimeConfig::default(),
            rules: None,
            actors: None,
            transforms: TransformTable::default(),
        }
    }

    pub fn search_spaces(&self) -> Vec<SearchSpace> {
        self.runtime
            .search_spaces
            .clone()
            .unwrap_or_else(|| default_search_spaces(&self.sim))
    }

    pub fn actors(&self) -> ActorDirectory {
        let mut a = self.actors.clone().unwrap_or_else(default_actors);
        if self.runtime.hold_maintenance {
            a.hold_maintenance();
        }
        a
    }

    pub fn rules(&self) -> Vec<Rule> {
        self.rules.clone().unwrap_or_else(default_rules)
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs: Vec<String> = Vec::new();
        if let Err(e) = self.sim.validate() {
            errs.extend(e.iter().map(|e| format!("sim: {e}")));
        }
        let points: BTreeMap<String, PointSpec> =
            self.sim.points().into_iter().map(|p| (p.point_id.clone(), p)).collect();
        let actuators: BTreeSet<String> = self.sim.actuators().into_iter().collect();
        for s in self.search_spaces() {
            if !actuators.contains(&s.actuator) {
                errs.push(format!("search space {}: unknown actuator {}", s.system, s.actuator));
            }
            let range = points
                .values()
                .find(|p| p.system_id == s.system && p.unit == s.unit && p.quantity.contains("supply"))
                .map(|p| p.range);
            if let Err(e) = s.validate(range) {
                errs.push(e.to_string());
            }
        }
        if let Err(e) = validate_rules(&self.rules(), &self.actors().ids()) {
            errs.push(format!("rules: {e}"));
        }
        if let Err(e) = self.transforms.validate() {
            errs.extend(e.iter().map(|e| format!("transforms: {e}")));
        }
        let rt = &self.runtime;
        if rt.probe_ticks == 0 || rt.rebaseline_ticks == 0 {
            errs.push("runtime: probe_ticks and rebaseline_ticks must be positive".into());
        }
        if rt.detector.window == 0 || rt.detector.persistence == 0 || !(rt.detector.k > 0.0) {
            errs.push("runtime: detector window, persistence and k must be positive".into());
        }
        if !(rt.min_comfort_width > 0.0) {
            errs.push("runtime: min_comfort_width must be positive".into());
        }
        for z in &self.sim.zones {
            if z.comfort_limits.upper - z.comfort_limits.lower < rt.min_comfort_width {
                errs.push(format!("zone {}: comfort limits narrower than min_comfort_width", z.id));
            }
        }
        if rt.bkr.retention_ticks == 0 {
            errs.push("runtime: retention_ticks must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// A chilled-water setpoint schedule in two half-day windows over 6..=13 °C
/// for every chiller.
pub fn default_search_spaces(sim: &SimConfig) -> Vec<SearchSpace> {
    sim.systems
        .iter()
        .filter_map(|s| match s {
            SystemSpec::Chiller(c) => Some(SearchSpace {
                system: c.id.clone(),
                actuator: format!("{}.setpoint", c.id),
                unit: "°C".into(),
                windows: vec![
                    HourWindow {
                        start_hour: 0.0,
                        end_hour: 12.0,
                    },
                    HourWindow {
                        start_hour: 12.0,
                        end_hour: 24.0,
                    },
                ],
                grid: (6..=13).map(f64::from).collect(),
                safety: false,
            }),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bkr(#[from] BkrError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone)]
struct OptJob {
    space: usize,
    due: Tick,
    causes: Vec<String>,
    chains: Vec<String>,
    approval: Option<String>,
}

#[derive(Debug, Clone)]
struct Rebaseline {
    due: Tick,
    /// Systems whose baselines are recaptured; `None` means every system.
    scope: Option<BTreeSet<String>>,
    chains: Vec<String>,
    drifts: Vec<String>,
}

#[derive(Debug, Clone, Default)]
struct CxState {
    probe_start: Tick,
    report: Option<CommissioningReport>,
    blocked: bool,
    /// Re-commissioning after an equipment change rather than first start.
    upgrade: bool,
    baselined_once: bool,
}

pub struct Building {
    cfg: BuildingConfig,
    scenario: ScenarioScript,
    world: SimWorld,
    broker: Broker,
    cursors: Vec<Cursor>,
    stream: StreamEngine,
    bkr: Bkr,
    owner: ModeOwner,
    detector: Detector,
    classifier: RuleClassifier,
    catalog: BTreeMap<String, PointSpec>,
    actors: ActorDirectory,
    spaces: Vec<SearchSpace>,
    tickets: TicketStore,
    events: BTreeMap<String, EventRecord>,
    chains: BTreeMap<String, OcxChain>,
    schedules: BTreeMap<String, ParameterSchedule>,
    last_commanded: BTreeMap<String, f64>,
    pending: Vec<ActuatorCommand>,
    jobs: Vec<OptJob>,
    rebaseline: Option<Rebaseline>,
    cx: CxState,
    waivers: BTreeSet<String>,
    timeline: Vec<TimelineEntry>,
    requests: RequestCache,
    optimizations: u64,
    dead_letters: u64,
}

impl Building {
    /// A building whose repository and broker live only in memory.
    pub fn in_memory(cfg: BuildingConfig, scenario: ScenarioScript) -> Result<Self, RuntimeError> {
        cfg.validate().map_err(RuntimeError::Config)?;
        let world = SimWorld::new(cfg.sim.clone(), scenario.clone())?;
        let bkr = Bkr::in_memory(cfg.runtime.bkr.clone());
        Self::assemble(cfg, scenario, world, Broker::in_memory(), bkr)
    }

    /// Opens or creates a building persisted under `dir`. Knowledge,
    /// telemetry, tickets and the mode are recovered from disk; the plant
    /// itself restarts at the tick after the last stored state vector. A
    /// missing historical zone means the building must be commissioned again.
    pub fn open(dir: impl AsRef<Path>, cfg: BuildingConfig, scenario: ScenarioScript) -> Result<Self, RuntimeError> {
        cfg.validate().map_err(RuntimeError::Config)?;
        let dir = dir.as_ref();
        let (bkr, rec) = Bkr::open(dir.join("bkr"), cfg.runtime.bkr.clone())?;
        let broker = Broker::open(dir.join("broker"))?;
        let start = rec.rt_latest.map_or(0, |t| t + 1);
        let world = SimWorld::resume_at(cfg.sim.clone(), scenario.clone(), start)?;
        let mut b = Self::assemble(cfg, scenario, world, broker, bkr)?;
        if let Some(last) = b.bkr.rt.latest().cloned() {
            b.stream.restore(&last);
        }
        b.cx.probe_start = start;
        if rec.hist_recovered {
            b.recover(start)?;
            b.restore_requests()?;
        }
        Ok(b)
    }

    fn assemble(
        cfg: BuildingConfig,
        scenario: ScenarioScript,
        world: SimWorld,
        broker: Broker,
        mut bkr: Bkr,
    ) -> Result<Self, RuntimeError> {
        let actors = cfg.actors();
        if bkr.rules.rules().is_empty() {
            bkr.rules.replace(cfg.rules(), &actors.ids())?;
        }
        for t in TOPICS {
            broker.create_topic(t)?;
        }
        let cursors = TOPICS
            .iter()
            .map(|t| broker.resume(t, STREAM_CONSUMER))
            .collect::<Result<Vec<_>, _>>()?;
        let mut transforms = cfg.transforms.clone();
        transforms.0.extend(TransformTable::default().0);
        let stream = StreamEngine::new(world.config().start_ms, world.tick_ms(), transforms);
        let catalog = world.points().iter().map(|p| (p.point_id.clone(), p.clone())).collect();
        Ok(Self {
            spaces: cfg.search_spaces(),
            detector: Detector::new(cfg.runtime.detector.clone()),
            owner: ModeOwner::new(),
            classifier: RuleClassifier::default(),
            catalog,
            actors,
            tickets: TicketStore::default(),
            events: BTreeMap::new(),
            chains: BTreeMap::new(),
            schedules: BTreeMap::new(),
            last_commanded: BTreeMap::new(),
            pending: Vec::new(),
            jobs: Vec::new(),
            rebaseline: None,
            cx: CxState::default(),
            waivers: BTreeSet::new(),
            timeline: Vec::new(),
            requests: RequestCache::default(),
            optimizations: 0,
            dead_letters: 0,
            cfg,
            scenario,
            world,
            broker,
            cursors,
            stream,
            bkr,
        })
    }

    fn recover(&mut self, start: Tick) -> Result<(), RuntimeError> {
        let journal = self.bkr.hist.records(MODE_JOURNAL_LOG)?;
        self.owner = ModeOwner::replay(&journal);
        self.timeline = self.bkr.hist.records(TIMELINE_LOG)?;
        for e in self.bkr.hist.records::<EventRecord>(EVENTS_LOG)? {
            self.events.insert(e.event.event_id.clone(), e);
        }
        let tickets: Vec<ActionTicket> = self.bkr.hist.records(TICKETS_LOG)?;
        self.tickets = TicketStore::restore(tickets);
        for s in self.bkr.hist.records::<ParameterSchedule>(SCHEDULES_LOG)? {
            self.schedules.insert(s.system.clone(), s);
        }
        for c in self.bkr.hist.records::<OcxChain>(OCX_LOG)? {
            self.chains.insert(c.chain_id.clone(), c);
        }
        self.waivers = self.bkr.hist.records::<String>(WAIVERS_LOG)?.into_iter().collect();
        self.cx.report = self.bkr.hist.records::<CommissioningReport>(COMMISSIONING_LOG)?.pop();
        self.cx.baselined_once = !self.bkr.registry().is_empty();
        let next_event = self
            .events
            .keys()
            .filter_map(|k| k.strip_prefix("ev-")?.parse::<u64>().ok())
            .max()
            .map_or(1, |n| n + 1);
        self.detector.set_next_id(next_event);
        for e in self.events.values().filter(|e| e.is_open()) {
            self.detector.mark_open(&e.event.target, e.event.kind, &e.event.event_id);
            if e.event.kind == EventKind::Fault && e.event.system_kind == Some(SystemKind::PowerSupply) {
                self.detector.suppress_drift_everywhere(true);
            }
        }
        match self.owner.mode() {
            Mode::Initializing => {
                self.cx.upgrade = !self.bkr.registry().is_empty();
            }
            Mode::Optimizing => {
                for i in 0..self.spaces.len() {
                    self.queue_job(i, start, "restart", None);
                }
            }
            Mode::DetectingChange | Mode::Interfacing => self.start_rebaseline(start, None, None, None),
        }
        Ok(())
    }

    pub fn config(&self) -> &BuildingConfig {
        &self.cfg
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn bkr(&self) -> &Bkr {
        &self.bkr
    }

    /// Test access to the repository, e.g. to inject storage failures.
    pub fn bkr_mut(&mut self) -> &mut Bkr {
        &mut self.bkr
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn tick(&self) -> Tick {
        self.world.tick()
    }

    pub fn mode(&self) -> Mode {
        self.owner.mode()
    }

    pub fn journal(&self) -> &[crate::autonomic::JournalEntry] {
        self.owner.journal()
    }

    pub fn timeline(&self) -> &[TimelineEntry] {
        &self.timeline
    }

    pub fn timeline_since(&self, seq: u64) -> &[TimelineEntry] {
        let from = (seq as usize).min(self.timeline.len());
        &self.timeline[from..]
    }

    pub fn event_records(&self) -> Vec<EventRecord> {
        self.events.values().cloned().collect()
    }

    pub fn ticket_list(&self) -> Vec<ActionTicket> {
        self.tickets.all().cloned().collect()
    }

    pub fn ticket_store(&self) -> &TicketStore {
        &self.tickets
    }

    pub fn schedules(&self) -> &BTreeMap<String, ParameterSchedule> {
        &self.schedules
    }

    pub fn chains(&self) -> Vec<OcxChain> {
        self.chains.values().cloned().collect()
    }

    pub fn commissioning_report(&self) -> Option<&CommissioningReport> {
        self.cx.report.as_ref()
    }

    pub fn optimizations(&self) -> u64 {
        self.optimizations
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn quarantined(&self) -> u64 {
        self.stream.quarantined_total()
    }

    pub fn dead_letters(&self) -> u64 {
        self.dead_letters
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            schema: SCHEMA_VERSION,
            ticks: self.tick(),
            final_mode: self.owner.state().clone(),
            events: self.event_records(),
            tickets: self.ticket_list(),
            mode_history: self.journal().to_vec(),
            metered_kwh: self.world.energy().metered_kwh,
            hvac_kwh: self.world.energy().hvac_kwh,
            optimizations: self.optimizations,
            quarantined: self.quarantined(),
        }
    }

    pub fn run(&mut self, ticks: u64) -> Result<(), RuntimeError> {
        for _ in 0..ticks {
            self.step()?;
        }
        Ok(())
    }

    /// Advances the whole building by one tick.
    pub fn step(&mut self) -> Result<(), RuntimeError> {
        let t = self.world.tick();
        self.schedule_commands(t)?;
        let cmds = std::mem::take(&mut self.pending);
        let out = self.world.step(&cmds)?;
        for e in &out.rejected {
            self.note(t, TimelineKind::Anomaly, format!("command rejected: {e}"), serde_json::Value::Null)?;
        }
        for ev in &out.applied {
            self.note(
                t,
                TimelineKind::Injection,
                format!("{:?} {}", ev.kind, ev.target),
                serde_json::to_value(ev).unwrap_or_default(),
            )?;
        }
        for m in out.messages {
            let topic = self.catalog.get(&m.point_id).map_or("services", |p| topic_for(p.system_kind));
            self.broker.publish(topic, m)?;
        }
        let reg = self.bkr.registry();
        let (sv, _) = self
            .stream
            .ingest_tick(t, &self.broker, &mut self.cursors, STREAM_CONSUMER, &reg)?;
        if let Err(e) = self.stream.persist(&mut self.bkr, &sv) {
            self.dead_letters += 1;
            self.note(t, TimelineKind::Anomaly, e.to_string(), serde_json::Value::Null)?;
        }
        if self.owner.mode() == Mode::Initializing {
            self.commissioning_tick(t)?;
        } else {
            for ev in self.detector.observe(&sv, &reg) {
                self.on_event(ev, t)?;
            }
        }
        self.run_actor_scripts(t)?;
        self.run_jobs(t)?;
        self.run_rebaseline(t)?;
        self.watchdog(t)?;
        self.process_mode(t)?;
        if self.owner.mode() == Mode::Optimizing && self.jobs.is_empty() && self.owner.pending() == 0 {
            self.owner.post(Stimulus::OptimumFound, format!("opt@{t}"));
        }
        let tph = (3600 / self.cfg.sim.tick_seconds.max(1)).max(1);
        if (t + 1).is_multiple_of(tph) {
            etl_cycle(&mut self.bkr, tph, t)?;
        }
        Ok(())
    }

    fn note(&mut self, tick: Tick, kind: TimelineKind, subject: String, detail: serde_json::Value) -> Result<(), RuntimeError> {
        let e = TimelineEntry {
            seq: self.timeline.len() as u64,
            tick,
            kind,
            subject,
            detail,
        };
        self.bkr.hist.append(TIMELINE_LOG, &e)?;
        self.timeline.push(e);
        Ok(())
    }

    fn save_event(&mut self, id: &str) -> Result<(), RuntimeError> {
        if let Some(e) = self.events.get(id) {
            self.bkr.hist.append(EVENTS_LOG, e)?;
        }
        Ok(())
    }

    fn save_chain(&mut self, id: &str) -> Result<(), RuntimeError> {
        if let Some(c) = self.chains.get(id) {
            self.bkr.hist.append(OCX_LOG, c)?;
        }
        Ok(())
    }

    fn issue(&mut self, t: Tick, cmd: ActuatorCommand, via: &str) -> Result<(), RuntimeError> {
        self.note(
            t,
            TimelineKind::ActuatorCommand,
            format!("{}={}", cmd.actuator_id, cmd.value),
            serde_json::json!({ "via": via }),
        )?;
        self.pending.push(cmd);
        Ok(())
    }

    fn schedule_commands(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let hour = self.world.hour_at(t);
        let due: Vec<(String, f64, String)> = self
            .schedules
            .values()
            .filter_map(|s| {
                let sp = s.setpoint_at(hour)?;
                (self.last_commanded.get(&s.actuator) != Some(&sp)).then(|| (s.actuator.clone(), sp, s.system.clone()))
            })
            .collect();
        for (act, sp, system) in due {
            self.last_commanded.insert(act.clone(), sp);
            self.issue(t, ActuatorCommand::new(act, sp), &format!("schedule {system}"))?;
        }
        Ok(())
    }

    fn dispatch_ticket(&mut self, t: Tick, nt: NewTicket) -> Result<ActionTicket, RuntimeError> {
        let tk = self.tickets.dispatch(nt, t);
        self.note(
            t,
            TimelineKind::TicketDispatched,
            format!("{} {}", tk.ticket_id, tk.actor_id),
            serde_json::to_value(&tk).unwrap_or_default(),
        )?;
        self.bkr.hist.append(TICKETS_LOG, &tk)?;
        Ok(tk)
    }

    fn escalate(&mut self, t: Tick, source: &str, rule_id: &str, reason: String) -> Result<ActionTicket, RuntimeError> {
        let mut params = BTreeMap::new();
        params.insert("reason".to_string(), serde_json::Value::String(reason));
        self.dispatch_ticket(
            t,
            NewTicket {
                source_event: source.to_string(),
                rule_id: rule_id.to_string(),
                actor_id: ESCALATION_ACTOR.into(),
                kind: TicketKind::Escalation,
                command: TicketCommand {
                    verb: "Escalate".into(),
                    params,
                },
                priority: 1,
            },
        )
    }

    fn on_event(&mut self, ev: ChangeEvent, t: Tick) -> Result<(), RuntimeError> {
        let id = ev.event_id.clone();
        self.note(
            t,
            TimelineKind::EventRaised,
            format!("{id} {:?} {}", ev.kind, ev.target),
            serde_json::to_value(&ev).unwrap_or_default(),
        )?;
        self.events.insert(
            id.clone(),
            EventRecord {
                event: ev.clone(),
                status: EventStatus::Open,
                resolved_at: None,
                resolution: None,
                rule_id: None,
                tickets: Vec::new(),
                self_heal: Vec::new(),
                on_resolve: Vec::new(),
                escalated: false,
                chain: None,
            },
        );
        match ev.kind {
            EventKind::Fault => {
                self.owner.post(Stimulus::FaultDetected, id.clone());
                if ev.system_kind == Some(SystemKind::PowerSupply) {
                    self.detector.suppress_drift_everywhere(true);
                }
            }
            EventKind::ConceptDrift => {
                self.owner.post(Stimulus::DriftDetected, id.clone());
                let own: Vec<usize> = (0..self.spaces.len()).filter(|i| self.spaces[*i].system == ev.target).collect();
                let targets = if own.is_empty() { (0..self.spaces.len()).collect() } else { own };
                for i in targets {
                    self.queue_job(i, t + 1, &id, None);
                }
            }
        }
        self.dispatch_event(&id, &ev, t)?;
        self.save_event(&id)
    }

    fn dispatch_event(&mut self, id: &str, ev: &ChangeEvent, t: Tick) -> Result<(), RuntimeError> {
        let Some(p) = plan(self.bkr.rules.rules(), &self.actors, ev, self.owner.mode()) else {
            return Ok(());
        };
        let mut healed = Vec::new();
        for a in &p.self_heal {
            let actor = self.actors.get(&a.actor_id).cloned();
            match actor.map_err(|e| e.to_string()).and_then(|s| s.command(&a.verb).map_err(|e| e.to_string())) {
                Ok(cmd) => {
                    healed.push(cmd.clone());
                    self.issue(t, cmd, &format!("{} {}", a.actor_id, a.verb))?;
                }
                Err(e) => self.note(t, TimelineKind::Anomaly, format!("self-heal failed: {e}"), serde_json::Value::Null)?,
            }
        }
        if !p.missing_actors.is_empty() {
            self.note(
                t,
                TimelineKind::Anomaly,
                format!("rule {} names unknown actors; consider disabling it", p.rule_id),
                serde_json::json!({ "missing_actors": p.missing_actors }),
            )?;
        }
        let mut ids = Vec::new();
        for a in &p.actions {
            let tk = self.dispatch_ticket(
                t,
                NewTicket {
                    source_event: id.to_string(),
                    rule_id: p.rule_id.clone(),
                    actor_id: a.actor_id.clone(),
                    kind: a.ticket_kind,
                    command: TicketCommand {
                        verb: a.verb.clone(),
                        params: a.params.clone(),
                    },
                    priority: a.priority,
                },
            )?;
            ids.push(tk.ticket_id);
        }
        if let Some(rec) = self.events.get_mut(id) {
            rec.rule_id = Some(p.rule_id.clone());
            rec.tickets.extend(ids);
            rec.self_heal = healed;
            rec.on_resolve = p.on_resolve.clone();
        }
        Ok(())
    }

    fn run_actor_scripts(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let due: Vec<(String, String, ScriptStep)> = self
            .tickets
            .all()
            .filter(|tk| tk.status != TicketStatus::Resolved)
            .filter_map(|tk| {
                let a = self.actors.get(&tk.actor_id).ok()?;
                a.step(tk, t).map(|s| (tk.ticket_id.clone(), tk.actor_id.clone(), s))
            })
            .collect();
        for (id, actor, step) in due {
            let res = match step {
                ScriptStep::Acknowledge => self.acknowledge_at(&id, &actor, t).map(|_| ()),
                ScriptStep::Resolve(r) => self.resolve_at(&id, r, &actor, t).map(|_| ()),
            };
            match res {
                Ok(()) => {}
                Err(e) if e.is_internal() => return Err(RuntimeError::Internal(e.to_string())),
                Err(e) => tracing::warn!(ticket = %id, "scripted actor step rejected: {e}"),
            }
        }
        Ok(())
    }

    pub(crate) fn acknowledge_at(&mut self, id: &str, actor: &str, t: Tick) -> Result<ActionTicket, ApiError> {
        let res = self.tickets.acknowledge(id, actor, t);
        if let Some(a) = self.tickets.audit().last().cloned() {
            self.bkr.hist.append(AUDIT_LOG, &a).map_err(ApiError::storage)?;
        }
        let tk = res?;
        self.note(
            t,
            TimelineKind::TicketAcknowledged,
            format!("{} {}", tk.ticket_id, actor),
            serde_json::Value::Null,
        )
        .map_err(ApiError::from)?;
        self.bkr.hist.append(TICKETS_LOG, &tk).map_err(ApiError::storage)?;
        Ok(tk)
    }

    pub(crate) fn resolve_at(&mut self, id: &str, resolution: Resolution, actor: &str, t: Tick) -> Result<ActionTicket, ApiError> {
        let res = self.tickets.resolve(id, resolution, actor, t);
        if let Some(a) = self.tickets.audit().last().cloned() {
            self.bkr.hist.append(AUDIT_LOG, &a).map_err(ApiError::storage)?;
        }
        let tk = res?;
        self.note(
            t,
            TimelineKind::TicketResolved,
            format!("{} {:?}", tk.ticket_id, resolution),
            serde_json::json!({ "actor": actor }),
        )?;
        self.bkr.hist.append(TICKETS_LOG, &tk).map_err(ApiError::storage)?;
        self.after_resolution(&tk, t)?;
        Ok(tk)
    }

    fn after_resolution(&mut self, tk: &ActionTicket, t: Tick) -> Result<(), RuntimeError> {
        let resolution = tk.resolution.expect("resolved ticket");
        if let Some(device) = tk.source_event.strip_prefix("cx:") {
            return self.after_commissioning_ticket(device, resolution, t);
        }
        if tk.kind == TicketKind::Approval {
            if let Some(pos) = self.jobs.iter().position(|j| j.approval.as_deref() == Some(&tk.ticket_id)) {
                if resolution == Resolution::Approved {
                    self.jobs[pos].approval = None;
                    self.jobs[pos].due = self.jobs[pos].due.max(t + 1);
                } else {
                    let job = self.jobs.remove(pos);
                    let system = self.spaces[job.space].system.clone();
                    self.note(t, TimelineKind::Anomaly, format!("optimization of {system} declined"), serde_json::Value::Null)?;
                    self.finish_optimizing(t);
                }
            }
            return Ok(());
        }
        if !matches!(tk.kind, TicketKind::Repair | TicketKind::Escalation) {
            return Ok(());
        }
        let open = self.events.get(&tk.source_event).is_some_and(|e| e.is_open());
        if open {
            self.resolve_event(&tk.source_event.clone(), resolution, &tk.ticket_id, t)?;
        }
        Ok(())
    }

    fn resolve_event(&mut self, id: &str, resolution: Resolution, ticket: &str, t: Tick) -> Result<(), RuntimeError> {
        let Some(rec) = self.events.get_mut(id) else {
            return Ok(());
        };
        rec.status = EventStatus::Resolved;
        rec.resolved_at = Some(t);
        rec.resolution = Some(resolution);
        let ev = rec.event.clone();
        let on_resolve = rec.on_resolve.clone();
        let reg = self.bkr.registry();
        self.detector.close(&ev.target, ev.kind);
        self.detector.reset_system(&reg, &ev.target);
        if ev.kind == EventKind::Fault && ev.system_kind == Some(SystemKind::PowerSupply) {
            let other_outage = self.events.values().any(|e| {
                e.is_open() && e.event.kind == EventKind::Fault && e.event.system_kind == Some(SystemKind::PowerSupply)
            });
            if !other_outage {
                self.detector.suppress_drift_everywhere(false);
                self.detector.reset_windows();
            }
        }
        if resolution != Resolution::Waived && ev.kind == EventKind::Fault {
            let repair = ScenarioEvent {
                tick: t,
                kind: InjectionKind::Repair,
                target: ev.target.clone(),
                params: Default::default(),
            };
            let warnings = self.world.inject(&repair)?;
            self.note(
                t,
                TimelineKind::Injection,
                format!("Repair {}", ev.target),
                serde_json::json!({ "warnings": warnings }),
            )?;
        }
        for a in on_resolve {
            if let Ok(cmd) = self.actors.get(&a.actor_id).and_then(|s| s.command(&a.verb)) {
                self.issue(t, cmd, &format!("{} {}", a.actor_id, a.verb))?;
            }
        }
        self.note(
            t,
            TimelineKind::EventResolved,
            format!("{id} {resolution:?}"),
            serde_json::json!({ "ticket": ticket }),
        )?;
        if ev.kind == EventKind::Fault {
            match resolution {
                Resolution::EquipmentChanged => {
                    self.owner.post(Stimulus::EquipmentChanged, ticket.to_string());
                    self.cx = CxState {
                        probe_start: t + 1,
                        upgrade: true,
                        baselined_once: self.cx.baselined_once,
                        ..Default::default()
                    };
                    self.detector.reset_windows();
                }
                _ => self.owner.post(Stimulus::FaultResolvedNoEquipChange, ticket.to_string()),
            }
        }
        if resolution == Resolution::RepairedNoEquipChange {
            let chain = format!("cx-{:04}", self.chains.len() + 1);
            self.chains.insert(
                chain.clone(),
                OcxChain {
                    chain_id: chain.clone(),
                    trigger: id.to_string(),
                    system: ev.target.clone(),
                    ticket: Some(ticket.to_string()),
                    opened_at: t,
                    optimized_at: None,
                    objective_kwh: None,
                    baseline_updated_at: None,
                    baseline_retries: 0,
                    closed_at: None,
                },
            );
            if let Some(r) = self.events.get_mut(id) {
                r.chain = Some(chain.clone());
            }
            let own: Vec<usize> = (0..self.spaces.len()).filter(|i| self.spaces[*i].system == ev.target).collect();
            if own.is_empty() {
                self.start_rebaseline(t, Some(&ev.target), Some(chain.clone()), None);
            }
            for i in own {
                self.queue_job(i, t + 1, id, Some(chain.clone()));
            }
            self.save_chain(&chain)?;
        }
        self.save_event(id)
    }

    fn queue_job(&mut self, space: usize, due: Tick, cause: &str, chain: Option<String>) {
        if let Some(j) = self.jobs.iter_mut().find(|j| j.space == space) {
            j.causes.push(cause.to_string());
            j.chains.extend(chain);
            return;
        }
        self.jobs.push(OptJob {
            space,
            due,
            causes: vec![cause.to_string()],
            chains: chain.into_iter().collect(),
            approval: None,
        });
        if self.spaces[space].safety {
            let s = self.spaces[space].clone();
            let nt = NewTicket {
                source_event: cause.to_string(),
                rule_id: "safety-approval".into(),
                actor_id: ESCALATION_ACTOR.into(),
                kind: TicketKind::Approval,
                command: TicketCommand {
                    verb: "ApproveSearch".into(),
                    params: [("actuator".to_string(), serde_json::Value::String(s.actuator))].into(),
                },
                priority: 1,
            };
            match self.dispatch_ticket(self.world.tick().saturating_sub(1).max(due.saturating_sub(1)), nt) {
                Ok(tk) => self.jobs.last_mut().expect("pushed").approval = Some(tk.ticket_id),
                Err(e) => tracing::error!("approval ticket not dispatched: {e}"),
            }
        }
    }

    fn finish_optimizing(&mut self, t: Tick) {
        if self.owner.mode() == Mode::Optimizing && self.jobs.is_empty() {
            self.owner.post(Stimulus::OptimumFound, format!("opt@{t}"));
        }
    }

    fn run_jobs(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let (due, rest): (Vec<OptJob>, Vec<OptJob>) = std::mem::take(&mut self.jobs)
            .into_iter()
            .partition(|j| j.due <= t && j.approval.is_none());
        self.jobs = rest;
        if due.is_empty() {
            return Ok(());
        }
        for job in due {
            let space = self.spaces[job.space].clone();
            self.optimizations += 1;
            let incumbent = self.schedules.get(&space.system).map(|s| s.setpoints());
            let evaluator = TwinEvaluator::new(&self.world, space.clone(), self.cfg.runtime.optimizer.horizon_ticks);
            let outcome = optimize(&space, &evaluator, incumbent.as_deref(), &self.cfg.runtime.optimizer, t);
            let cause = job.causes.join(",");
            match outcome {
                Ok(OptOutcome::Found(s)) => {
                    self.note(
                        t,
                        TimelineKind::OptimizationCompleted,
                        format!("{} {:?}", s.system, s.setpoints()),
                        serde_json::json!({ "schedule": s, "causes": job.causes }),
                    )?;
                    self.bkr.hist.append(SCHEDULES_LOG, &s)?;
                    self.last_commanded.remove(&s.actuator);
                    for c in &job.chains {
                        if let Some(ch) = self.chains.get_mut(c) {
                            ch.optimized_at = Some(t);
                            ch.objective_kwh = Some(s.objective_value);
                        }
                        self.save_chain(c)?;
                    }
                    self.schedules.insert(s.system.clone(), s);
                }
                Ok(OptOutcome::Infeasible { evaluations }) => {
                    self.note(
                        t,
                        TimelineKind::Anomaly,
                        format!("no comfortable schedule for {}; incumbent kept", space.system),
                        serde_json::json!({ "evaluations": evaluations }),
                    )?;
                    self.escalate(t, &cause, "optimizer-infeasible", format!("no feasible schedule for {}", space.system))?;
                }
                Err(e) => {
                    self.note(t, TimelineKind::Anomaly, format!("optimization of {} failed: {e}", space.system), serde_json::Value::Null)?;
                    self.escalate(t, &cause, "optimizer-failed", e.to_string())?;
                }
            }
            let drifts = job
                .causes
                .iter()
                .filter(|c| self.events.get(*c).is_some_and(|e| e.event.kind == EventKind::ConceptDrift))
                .cloned()
                .collect();
            self.start_rebaseline(t, None, None, Some(drifts));
            for c in job.chains {
                self.start_rebaseline(t, None, Some(c), None);
            }
        }
        self.finish_optimizing(t);
        Ok(())
    }

    fn start_rebaseline(&mut self, t: Tick, system: Option<&str>, chain: Option<String>, drifts: Option<Vec<String>>) {
        let due = t + self.cfg.runtime.rebaseline_ticks;
        let scope = system.map(|s| BTreeSet::from([s.to_string()]));
        match self.rebaseline.as_mut() {
            Some(r) => {
                r.due = r.due.max(due);
                r.scope = match (r.scope.take(), scope) {
                    (Some(mut a), Some(b)) => {
                        a.extend(b);
                        Some(a)
                    }
                    _ => None,
                };
            }
            None => {
                self.rebaseline = Some(Rebaseline {
                    due,
                    scope,
                    chains: Vec::new(),
                    drifts: Vec::new(),
                })
            }
        }
        let r = self.rebaseline.as_mut().expect("set above");
        r.chains.extend(chain);
        r.drifts.extend(drifts.unwrap_or_default());
        let scope = r.scope.clone();
        let points: Vec<String> = self
            .bkr
            .registry()
            .points()
            .filter(|(_, d)| scope.as_ref().is_none_or(|s| s.contains(&d.system)))
            .map(|(p, _)| p.clone())
            .collect();
        self.detector.set_drift_suppressed(points);
    }

    fn run_rebaseline(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let Some(r) = self.rebaseline.clone() else {
            return Ok(());
        };
        if r.due > t {
            return Ok(());
        }
        let faulted: BTreeSet<String> = self
            .events
            .values()
            .filter(|e| e.is_open() && e.event.kind == EventKind::Fault)
            .map(|e| e.event.target.clone())
            .collect();
        let provenance = if self.cx.baselined_once {
            BaselineProvenance::OCx
        } else {
            BaselineProvenance::StartUpCx
        };
        let n = self.cfg.runtime.rebaseline_ticks as usize;
        let vectors = self.bkr.rt.last_n(n);
        let reg = self.bkr.registry();
        let (mut updated, mut short, mut skipped) = (0usize, 0usize, 0usize);
        for (point, rec) in reg.points() {
            if r.scope.as_ref().is_some_and(|s| !s.contains(&rec.system)) {
                continue;
            }
            if faulted.contains(&rec.system) {
                skipped += 1;
                continue;
            }
            let samples: Vec<f64> = vectors.iter().filter_map(|v| v.value(point)).collect();
            match self.bkr.update_baseline(point, Baseline::from_samples(&samples), provenance, t) {
                Ok(()) => updated += 1,
                Err(BkrError::InsufficientData { .. }) => short += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if updated == 0 && short > 0 {
            let retry = self.cfg.runtime.rebaseline_ticks.min(60);
            if let Some(r) = self.rebaseline.as_mut() {
                r.due = t + retry;
            }
            for c in &r.chains {
                if let Some(ch) = self.chains.get_mut(c) {
                    ch.baseline_retries += 1;
                }
            }
            return self.note(
                t,
                TimelineKind::Anomaly,
                format!("baseline update postponed: {short} points lack data"),
                serde_json::Value::Null,
            );
        }
        self.rebaseline = None;
        self.cx.baselined_once = true;
        let suppressed: Vec<String> = reg
            .points()
            .filter(|(_, rec)| faulted.contains(&rec.system))
            .map(|(p, _)| p.clone())
            .collect();
        self.detector.set_drift_suppressed(suppressed);
        self.note(
            t,
            TimelineKind::BaselineUpdated,
            format!("{updated} points {provenance:?}"),
            serde_json::json!({ "updated": updated, "insufficient": short, "skipped": skipped, "chains": r.chains }),
        )?;
        for c in &r.chains {
            if let Some(ch) = self.chains.get_mut(c) {
                ch.baseline_updated_at = Some(t);
                ch.closed_at = Some(t);
            }
            self.save_chain(c)?;
        }
        for d in &r.drifts {
            let Some(rec) = self.events.get_mut(d) else {
                continue;
            };
            if !rec.is_open() {
                continue;
            }
            rec.status = EventStatus::Resolved;
            rec.resolved_at = Some(t);
            let target = rec.event.target.clone();
            self.detector.close(&target, EventKind::ConceptDrift);
            self.note(t, TimelineKind::EventResolved, format!("{d} Rebaselined"), serde_json::Value::Null)?;
            self.save_event(d)?;
        }
        Ok(())
    }

    fn watchdog(&mut self, t: Tick) -> Result<(), RuntimeError> {
        let limit = self.cfg.runtime.watchdog_ticks;
        let overdue: Vec<String> = self
            .events
            .values()
            .filter(|e| e.is_open() && e.event.kind == EventKind::Fault && !e.escalated)
            .filter(|e| t >= e.event.detected_at + limit)
            .map(|e| e.event.event_id.clone())
            .collect();
        for id in overdue {
            let tk = self.escalate(t, &id, "watchdog", format!("unresolved after {limit} ticks"))?;
            if let Some(e) = self.events.get_mut(&id) {
                e.escalated = true;
                e.tickets.push(tk.ticket_id);
            }
            self.save_event(&id)?;
        }
        Ok(())
    }

    fn process_mode(&mut self, t: Tick) -> Result<(), RuntimeError> {
        for e in self.owner.process(t) {
            self.bkr.hist.append(MODE_JOURNAL_LOG, &e)?;
            match e.outcome {
                Outcome::Applied => self.note(
                    t,
                    TimelineKind::ModeChanged,
                    e.to.to_string(),
                    serde_json::to_value(&e).unwrap_or_default(),
                )?,
                Outcome::Rejected => self.note(
                    t,
                    TimelineKind::Anomaly,
                    format!("{:?} rejected in {}", e.stimulus, e.from),
                    serde_json::to_value(&e).unwrap_or_default(),
                )?,
                Outcome::Absorbed | Outcome::Deferred => {}
            }
        }
        Ok(())
    }

    fn commissioning_tick(&mut self, t: Tick) -> Result<(), RuntimeError> {
        if self.cx.blocked || t + 1 < self.cx.probe_start + self.cfg.runtime.probe_ticks {
            return Ok(());
        }
        match self.commission_now(t) {
            Err(e) if e.is_internal() => Err(RuntimeError::Internal(e.to_string())),
            _ => Ok(()),
        }
    }

    /// Runs start-up commissioning over the probe window gathered so far.
    pub(crate) fn commission_now(&mut self, t: Tick) -> Result<CommissioningReport, ApiError> {
        let probe = ProbeWindow {
            start_tick: self.cx.probe_start,
            end_tick: t + 1,
            start_ms: self.world.config().start_ms,
            tick_ms: self.world.tick_ms(),
        };
        let result = Commissioner {
            broker: &self.broker,
            transforms: self.stream.transforms(),
            classifier: &self.classifier,
            catalog: &self.catalog,
            waivers: &self.waivers,
        }
        .run(&mut self.bkr, probe, t);
        let report = match result {
            Ok(r) => r,
            Err(CommissionError::EmptyBuilding { .. }) => {
                self.cx.blocked = true;
                let msg = result.err().map(|e| e.to_string()).unwrap_or_default();
                self.note(t, TimelineKind::Anomaly, msg.clone(), serde_json::Value::Null)?;
                return Err(ApiError::Conflict(msg));
            }
            Err(CommissionError::Bkr(e)) => return Err(ApiError::storage(e)),
        };
        self.note(
            t,
            TimelineKind::CommissioningReport,
            format!("{}/{} passed, {} waived", report.passed, report.items.len(), report.waived),
            serde_json::json!({ "passed": report.passed, "failed": report.failed, "waived": report.waived }),
        )?;
        self.bkr.hist.append(COMMISSIONING_LOG, &report).map_err(ApiError::storage)?;
        self.cx.report = Some(report.clone());
        if report.complete {
            self.cx.blocked = false;
            self.cx.baselined_once = true;
            let stimulus = if self.cx.upgrade {
                Stimulus::UpgradeComplete
            } else {
                Stimulus::CommissioningComplete
            };
            self.owner.post(stimulus, format!("commissioning@{t}"));
            self.detector.reset_windows();
            for i in 0..self.spaces.len() {
                self.queue_job(i, t + 1, "commissioning", None);
            }
            if self.spaces.is_empty() {
                self.pending_optimum_without_search(t);
            }
        } else {
            self.cx.blocked = true;
            let failures: Vec<_> = report.failures().cloned().collect();
            for f in failures {
                let source = format!("cx:{}", f.device_id);
                let open = self.tickets.for_event(&source).any(|tk| tk.status != TicketStatus::Resolved);
                if open {
                    continue;
                }
                let kind = if f.failure == Some(CheckFailure::Unclassified) {
                    TicketKind::HumanLabel
                } else {
                    TicketKind::Repair
                };
                let verb = match f.failure {
                    Some(CheckFailure::Unclassified) => "LabelDevice",
                    Some(CheckFailure::NoSpecification) => "ProvideSpecification",
                    _ => "InspectSensor",
                };
                let params = serde_json::json!({
                    "device_id": f.device_id,
                    "observed_min": f.observed_min,
                    "observed_max": f.observed_max,
                    "range": f.range,
                });
                let params = params.as_object().cloned().unwrap_or_default().into_iter().collect();
                self.dispatch_ticket(
                    t,
                    NewTicket {
                        source_event: source,
                        rule_id: "commissioning".into(),
                        actor_id: ESCALATION_ACTOR.into(),
                        kind,
                        command: TicketCommand {
                            verb: verb.into(),
                            params,
                        },
                        priority: 1,
                    },
                )?;
            }
        }
        Ok(report)
    }

    fn pending_optimum_without_search(&mut self, t: Tick) {
        self.owner.post(Stimulus::OptimumFound, format!("no-search@{t}"));
    }

    fn after_commissioning_ticket(&mut self, device: &str, resolution: Resolution, t: Tick) -> Result<(), RuntimeError> {
        match resolution {
            Resolution::Waived => {
                if self.waivers.insert(device.to_string()) {
                    self.bkr.hist.append(WAIVERS_LOG, &device.to_string())?;
                }
                if self.owner.mode() == Mode::Initializing && self.cx.blocked {
                    self.cx.blocked = false;
                    match self.commission_now(t) {
                        Err(e) if e.is_internal() => return Err(RuntimeError::Internal(e.to_string())),
                        _ => {}
                    }
                }
            }
            _ => {
                if let Some(p) = self.catalog.values().find(|p| p.device_id == device) {
                    let repair = ScenarioEvent {
                        tick: t,
                        kind: InjectionKind::Repair,
                        target: p.point_id.clone(),
                        params: Default::default(),
                    };
                    let _ = self.world.inject(&repair)?;
                }
                if self.owner.mode() == Mode::Initializing {
                    self.cx.blocked = false;
                    self.cx.probe_start = t + 1;
                }
            }
        }
        Ok(())
    }

    /// The current scenario, for artifact output.
    pub fn scenario(&self) -> &ScenarioScript {
        &self.scenario
    }
}
