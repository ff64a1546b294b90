use super::tickets::{ActionTicket, Resolution, TicketStatus};
use crate::bkr::TicketKind;
use crate::types::{ActuatorCommand, Tick};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorKind {
    MaintenanceStaff,
    Tenant,
    Manager,
    SmartGrid,
    OtherBuilding,
    VehicleService,
    BackupGenerator,
}

/// Scripted stand-in for a person or external system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Behavior {
    /// Acknowledges `ack_after` ticks after dispatch and resolves
    /// `resolve_after` ticks after acknowledging.
    Auto { ack_after: u64, resolve_after: u64 },
    /// Waits for an operator through the API or CLI.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorStub {
    pub actor_id: String,
    pub kind: ActorKind,
    pub behavior: Behavior,
    /// Building actuator driven by this actor's commands, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actuator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActorError {
    #[error("unknown actor {0}")]
    Unknown(String),
    #[error("actor {actor} does not accept command {verb}")]
    Unsupported { actor: String, verb: String },
}

/// What a scripted actor does with a ticket at a given tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptStep {
    Acknowledge,
    Resolve(Resolution),
}

impl ActorStub {
    pub fn new(actor_id: &str, kind: ActorKind, behavior: Behavior) -> Self {
        Self {
            actor_id: actor_id.into(),
            kind,
            behavior,
            actuator: None,
        }
    }

    /// Translates a direct command into an actuator setting. A backup
    /// generator takes exactly `Start` and `Stop`; other actors take none.
    pub fn command(&self, verb: &str) -> Result<ActuatorCommand, ActorError> {
        let unsupported = || ActorError::Unsupported {
            actor: self.actor_id.clone(),
            verb: verb.to_string(),
        };
        match (self.kind, self.actuator.as_deref(), verb) {
            (ActorKind::BackupGenerator, Some(a), "Start") => Ok(ActuatorCommand::new(a, 1.0)),
            (ActorKind::BackupGenerator, Some(a), "Stop") => Ok(ActuatorCommand::new(a, 0.0)),
            _ => Err(unsupported()),
        }
    }

    /// The scripted reaction to `ticket` at `tick`, if one is due.
    pub fn step(&self, ticket: &ActionTicket, tick: Tick) -> Option<ScriptStep> {
        let Behavior::Auto {
            ack_after,
            resolve_after,
        } = self.behavior
        else {
            return None;
        };
        match ticket.status {
            TicketStatus::Dispatched if tick >= ticket.dispatched_at + ack_after => Some(ScriptStep::Acknowledge),
            TicketStatus::Acknowledged if tick >= ticket.acknowledged_at? + resolve_after => {
                Some(ScriptStep::Resolve(match ticket.kind {
                    TicketKind::Notify => Resolution::Noted,
                    TicketKind::Approval => Resolution::Approved,
                    _ => Resolution::RepairedNoEquipChange,
                }))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorDirectory(pub BTreeMap<String, ActorStub>);

impl ActorDirectory {
    pub fn get(&self, id: &str) -> Result<&ActorStub, ActorError> {
        self.0.get(id).ok_or_else(|| ActorError::Unknown(id.to_string()))
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.0.keys().cloned().collect()
    }

    pub fn insert(&mut self, a: ActorStub) {
        self.0.insert(a.actor_id.clone(), a);
    }

    /// Makes every maintenance actor wait for a human.
    pub fn hold_maintenance(&mut self) {
        for a in self.0.values_mut() {
            if a.kind == ActorKind::MaintenanceStaff {
                a.behavior = Behavior::Manual;
            }
        }
    }
}

/// Actor stubs for the reference building.
pub fn default_actors() -> ActorDirectory {
    use ActorKind::*;
    let auto = |ack_after, resolve_after| Behavior::Auto {
        ack_after,
        resolve_after,
    };
    let mut d = ActorDirectory::default();
    d.insert(ActorStub::new("maintenance-chiller", MaintenanceStaff, auto(10, 300)));
    d.insert(ActorStub::new("maintenance-power", MaintenanceStaff, auto(2, 60)));
    d.insert(ActorStub::new("maintenance-hvac", MaintenanceStaff, auto(10, 240)));
    d.insert(ActorStub::new("smart-grid", SmartGrid, auto(1, 1)));
    d.insert(ActorStub::new("tenants", Tenant, auto(5, 5)));
    d.insert(ActorStub::new("manager", Manager, Behavior::Manual));
    d.insert(ActorStub::new("other-building", OtherBuilding, Behavior::Manual));
    d.insert(ActorStub::new("vehicle-service", VehicleService, Behavior::Manual));
    let mut gen = ActorStub::new("backup-generator", BackupGenerator, Behavior::Manual);
    gen.actuator = Some("gen-1.run".into());
    d.insert(gen);
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interfacing::tickets::TicketCommand;

    #[test]
    fn generator_accepts_exactly_start_and_stop() {
        let d = default_actors();
        let g = d.get("backup-generator").unwrap();
        assert_eq!(g.command("Start").unwrap(), ActuatorCommand::new("gen-1.run", 1.0));
        assert_eq!(g.command("Stop").unwrap(), ActuatorCommand::new("gen-1.run", 0.0));
        for verb in ["start", "Restart", "Repair", ""] {
            assert!(g.command(verb).is_err(), "{verb}");
        }
        assert!(d.get("tenants").unwrap().command("Start").is_err());
    }

    #[test]
    fn scripted_actor_acks_then_resolves() {
        let d = default_actors();
        let a = d.get("maintenance-power").unwrap();
        let mut t = ActionTicket {
            ticket_id: "tk-1".into(),
            source_event: "ev".into(),
            rule_id: "r".into(),
            actor_id: a.actor_id.clone(),
            kind: TicketKind::Repair,
            command: TicketCommand {
                verb: "Repair".into(),
                params: BTreeMap::new(),
            },
            priority: 1,
            status: TicketStatus::Dispatched,
            resolution: None,
            dispatched_at: 10,
            acknowledged_at: None,
            resolved_at: None,
            resolved_by: None,
        };
        assert_eq!(a.step(&t, 11), None);
        assert_eq!(a.step(&t, 12), Some(ScriptStep::Acknowledge));
        t.status = TicketStatus::Acknowledged;
        t.acknowledged_at = Some(12);
        assert_eq!(a.step(&t, 71), None);
        assert_eq!(a.step(&t, 72), Some(ScriptStep::Resolve(Resolution::RepairedNoEquipChange)));
        assert_eq!(d.get("manager").unwrap().step(&t, 1000), None);
    }
}
