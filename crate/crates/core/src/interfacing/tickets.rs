use crate::bkr::TicketKind;
use crate::types::Tick;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Identity allowed to act on any ticket besides its assignee.
pub const OPERATOR: &str = "operator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TicketStatus {
    Dispatched,
    Acknowledged,
    Resolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    RepairedNoEquipChange,
    EquipmentChanged,
    Waived,
    /// Notification read; no work implied.
    Noted,
    /// Answer to an approval request.
    Approved,
    Declined,
}

impl Resolution {
    /// Whether a ticket of `kind` may close with this resolution.
    pub fn fits(self, kind: TicketKind) -> bool {
        use Resolution::*;
        match kind {
            TicketKind::Approval => matches!(self, Approved | Declined),
            TicketKind::Notify => matches!(self, Noted | Waived),
            TicketKind::Repair | TicketKind::Escalation | TicketKind::HumanLabel => {
                matches!(self, RepairedNoEquipChange | EquipmentChanged | Waived)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketCommand {
    pub verb: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionTicket {
    pub ticket_id: String,
    /// Change event or process the ticket serves.
    pub source_event: String,
    pub rule_id: String,
    pub actor_id: String,
    pub kind: TicketKind,
    pub command: TicketCommand,
    pub priority: u8,
    pub status: TicketStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    pub dispatched_at: Tick,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acknowledged_at: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_at: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tick: Tick,
    pub ticket_id: String,
    pub action: String,
    pub actor: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum TicketError {
    #[error("ticket {0} not found")]
    NotFound(String),
    #[error("ticket {id} is {status:?}; it must be acknowledged first")]
    NotAcknowledged { id: String, status: TicketStatus },
    #[error("ticket {0} is already acknowledged")]
    AlreadyAcknowledged(String),
    #[error("ticket {0} is already resolved")]
    AlreadyResolved(String),
    #[error("ticket {id} is assigned to {assignee}; {actor} may not act on it")]
    Foreign { id: String, assignee: String, actor: String },
    #[error("resolution {resolution:?} does not apply to a {kind:?} ticket")]
    WrongResolution { resolution: Resolution, kind: TicketKind },
    #[error("an actor identity is required")]
    Anonymous,
}

/// All tickets plus the audit trail of every attempted status change.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TicketStore {
    tickets: BTreeMap<String, ActionTicket>,
    audit: Vec<AuditEntry>,
    next_id: u64,
}

pub struct NewTicket {
    pub source_event: String,
    pub rule_id: String,
    pub actor_id: String,
    pub kind: TicketKind,
    pub command: TicketCommand,
    pub priority: u8,
}

impl TicketStore {
    /// Rebuilds a store from persisted ticket snapshots; for each id the
    /// last snapshot wins.
    pub fn restore(snapshots: impl IntoIterator<Item = ActionTicket>) -> Self {
        let mut s = Self::default();
        for t in snapshots {
            if let Some(n) = t.ticket_id.strip_prefix("tk-").and_then(|n| n.parse::<u64>().ok()) {
                s.next_id = s.next_id.max(n);
            }
            s.tickets.insert(t.ticket_id.clone(), t);
        }
        s
    }

    pub fn dispatch(&mut self, t: NewTicket, tick: Tick) -> ActionTicket {
        self.next_id += 1;
        let ticket = ActionTicket {
            ticket_id: format!("tk-{:04}", self.next_id),
            source_event: t.source_event,
            rule_id: t.rule_id,
            actor_id: t.actor_id,
            kind: t.kind,
            command: t.command,
            priority: t.priority,
            status: TicketStatus::Dispatched,
            resolution: None,
            dispatched_at: tick,
            acknowledged_at: None,
            resolved_at: None,
            resolved_by: None,
        };
        self.tickets.insert(ticket.ticket_id.clone(), ticket.clone());
        ticket
    }

    pub fn get(&self, id: &str) -> Option<&ActionTicket> {
        self.tickets.get(id)
    }

    /// Tickets in dispatch order.
    pub fn all(&self) -> impl Iterator<Item = &ActionTicket> {
        self.tickets.values()
    }

    pub fn for_event<'a>(&'a self, event_id: &'a str) -> impl Iterator<Item = &'a ActionTicket> + 'a {
        self.tickets.values().filter(move |t| t.source_event == event_id)
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    fn authorize(&self, id: &str, actor: &str) -> Result<&ActionTicket, TicketError> {
        if actor.trim().is_empty() {
            return Err(TicketError::Anonymous);
        }
        let t = self.tickets.get(id).ok_or_else(|| TicketError::NotFound(id.to_string()))?;
        if actor != t.actor_id && actor != OPERATOR {
            return Err(TicketError::Foreign {
                id: id.to_string(),
                assignee: t.actor_id.clone(),
                actor: actor.to_string(),
            });
        }
        Ok(t)
    }

    fn record(&mut self, tick: Tick, id: &str, action: &str, actor: &str, res: &Result<ActionTicket, TicketError>) {
        self.audit.push(AuditEntry {
            tick,
            ticket_id: id.to_string(),
            action: action.to_string(),
            actor: actor.to_string(),
            accepted: res.is_ok(),
            reason: res.as_ref().err().map(|e| e.to_string()),
        });
    }

    pub fn acknowledge(&mut self, id: &str, actor: &str, tick: Tick) -> Result<ActionTicket, TicketError> {
        let res = self.authorize(id, actor).and_then(|t| match t.status {
            TicketStatus::Dispatched => Ok(()),
            TicketStatus::Acknowledged => Err(TicketError::AlreadyAcknowledged(id.to_string())),
            TicketStatus::Resolved => Err(TicketError::AlreadyResolved(id.to_string())),
        });
        let res = res.map(|()| {
            let t = self.tickets.get_mut(id).expect("authorized");
            t.status = TicketStatus::Acknowledged;
            t.acknowledged_at = Some(tick);
            t.clone()
        });
        self.record(tick, id, "acknowledge", actor, &res);
        res
    }

    pub fn resolve(&mut self, id: &str, resolution: Resolution, actor: &str, tick: Tick) -> Result<ActionTicket, TicketError> {
        let res = self.authorize(id, actor).and_then(|t| match t.status {
            TicketStatus::Dispatched => Err(TicketError::NotAcknowledged {
                id: id.to_string(),
                status: t.status,
            }),
            TicketStatus::Resolved => Err(TicketError::AlreadyResolved(id.to_string())),
            TicketStatus::Acknowledged if !resolution.fits(t.kind) => Err(TicketError::WrongResolution {
                resolution,
                kind: t.kind,
            }),
            TicketStatus::Acknowledged => Ok(()),
        });
        let res = res.map(|()| {
            let t = self.tickets.get_mut(id).expect("authorized");
            t.status = TicketStatus::Resolved;
            t.resolution = Some(resolution);
            t.resolved_at = Some(tick);
            t.resolved_by = Some(actor.to_string());
            t.clone()
        });
        self.record(tick, id, "resolve", actor, &res);
        res
    }
}
