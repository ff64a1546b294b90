use super::actors::ActorDirectory;
use crate::autonomic::Mode;
use crate::bkr::{Rule, RuleAction, RuleTrigger, SelfHealAction, TicketKind};
use crate::cdo::ChangeEvent;
use crate::types::{EventKind, Severity, SystemKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Rule id used when no stored rule, not even a default, covers an event.
pub const BUILTIN_ESCALATION: &str = "builtin-escalation";
pub const ESCALATION_ACTOR: &str = "manager";

pub fn trigger_matches(t: &RuleTrigger, ev: &ChangeEvent, mode: Mode) -> bool {
    t.kind.is_none_or(|k| k == ev.kind)
        && t.system_kind.is_none_or(|k| Some(k) == ev.system_kind)
        && t.system.as_ref().is_none_or(|s| *s == ev.target)
        && t.min_severity.is_none_or(|s| ev.severity >= s)
        && t.mode.is_none_or(|m| m == mode)
}

/// The concrete response chosen for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub rule_id: String,
    pub self_heal: Vec<SelfHealAction>,
    pub actions: Vec<RuleAction>,
    pub on_resolve: Vec<SelfHealAction>,
    /// Actors named by the rule but missing from the directory. Their
    /// actions were replaced by an escalation; the rule should be reviewed
    /// or disabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_actors: Vec<String>,
}

fn escalation(note: &str) -> RuleAction {
    let mut params = BTreeMap::new();
    params.insert("reason".to_string(), serde_json::Value::String(note.to_string()));
    RuleAction {
        actor_id: ESCALATION_ACTOR.into(),
        verb: "Escalate".into(),
        params,
        priority: 1,
        ticket_kind: TicketKind::Escalation,
    }
}

/// Chooses the response to `ev`: the first enabled matching rule by
/// `(priority, rule_id)`, else the enabled default for the event kind, else
/// a manager escalation for anything of Warning severity or above.
pub fn plan(rules: &[Rule], actors: &ActorDirectory, ev: &ChangeEvent, mode: Mode) -> Option<DispatchPlan> {
    let mut ordered: Vec<&Rule> = rules.iter().filter(|r| r.enabled).collect();
    ordered.sort_by(|a, b| (a.priority, &a.rule_id).cmp(&(b.priority, &b.rule_id)));
    let chosen = ordered
        .iter()
        .find(|r| !r.default && trigger_matches(&r.trigger, ev, mode))
        .or_else(|| ordered.iter().find(|r| r.default && r.trigger.kind == Some(ev.kind)));
    let Some(rule) = chosen else {
        return (ev.severity >= Severity::Warning).then(|| DispatchPlan {
            rule_id: BUILTIN_ESCALATION.into(),
            self_heal: vec![],
            actions: vec![escalation("no rule matched")],
            on_resolve: vec![],
            missing_actors: vec![],
        });
    };
    let known = |id: &str| actors.get(id).is_ok();
    let mut missing: Vec<String> = rule
        .actions
        .iter()
        .map(|a| &a.actor_id)
        .chain(rule.self_heal.iter().chain(&rule.on_resolve).map(|a| &a.actor_id))
        .filter(|a| !known(a))
        .cloned()
        .collect();
    missing.sort();
    missing.dedup();
    let mut actions: Vec<RuleAction> = rule.actions.iter().filter(|a| known(&a.actor_id)).cloned().collect();
    if !missing.is_empty() {
        actions.push(escalation(&format!("unknown actors: {}", missing.join(", "))));
    }
    actions.sort_by_key(|a| a.priority);
    Some(DispatchPlan {
        rule_id: rule.rule_id.clone(),
        self_heal: rule.self_heal.iter().filter(|a| known(&a.actor_id)).cloned().collect(),
        actions,
        on_resolve: rule.on_resolve.iter().filter(|a| known(&a.actor_id)).cloned().collect(),
        missing_actors: missing,
    })
}

fn action(actor: &str, verb: &str, priority: u8, kind: TicketKind) -> RuleAction {
    RuleAction {
        actor_id: actor.into(),
        verb: verb.into(),
        params: BTreeMap::new(),
        priority,
        ticket_kind: kind,
    }
}

fn fault_rule(id: &str, priority: u32, kind: SystemKind, actions: Vec<RuleAction>) -> Rule {
    Rule {
        rule_id: id.into(),
        priority,
        trigger: RuleTrigger {
            kind: Some(EventKind::Fault),
            system_kind: Some(kind),
            ..Default::default()
        },
        self_heal: vec![],
        actions,
        on_resolve: vec![],
        enabled: true,
        default: false,
    }
}

/// Rules store for the reference building.
pub fn default_rules() -> Vec<Rule> {
    use TicketKind::*;
    let generator = |verb: &str| SelfHealAction {
        actor_id: "backup-generator".into(),
        verb: verb.into(),
    };
    let mut power = fault_rule(
        "power-outage",
        5,
        SystemKind::PowerSupply,
        vec![
            action("maintenance-power", "RestoreMains", 1, Repair),
            action("smart-grid", "NotifyOutage", 2, Notify),
            action("tenants", "BroadcastOutage", 3, Notify),
            action("manager", "NotifyOutage", 3, Notify),
        ],
    );
    power.self_heal = vec![generator("Start")];
    power.on_resolve = vec![generator("Stop")];
    let hvac = |id: &str, kind| fault_rule(id, 20, kind, vec![action("maintenance-hvac", "Repair", 1, Repair)]);
    vec![
        power,
        fault_rule(
            "chiller-fault",
            10,
            SystemKind::Chiller,
            vec![action("maintenance-chiller", "ScheduleMaintenance", 1, Repair)],
        ),
        hvac("ahu-fault", SystemKind::AirHandler),
        hvac("boiler-fault", SystemKind::Boiler),
        hvac("zone-fault", SystemKind::Zone),
        Rule {
            rule_id: "default-fault".into(),
            priority: 1000,
            trigger: RuleTrigger {
                kind: Some(EventKind::Fault),
                ..Default::default()
            },
            self_heal: vec![],
            actions: vec![action(ESCALATION_ACTOR, "Escalate", 1, Escalation)],
            on_resolve: vec![],
            enabled: true,
            default: true,
        },
    ]
}
