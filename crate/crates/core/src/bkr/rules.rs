use super::BkrError;
use crate::autonomic::Mode;
use crate::jsonl;
use crate::types::{EventKind, Severity, SystemKind};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TicketKind {
    /// Work that resolves the originating fault.
    Repair,
    Notify,
    Escalation,
    Approval,
    HumanLabel,
}

/// Flat conjunction of optional predicates over event fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleTrigger {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_kind: Option<SystemKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAction {
    pub actor_id: String,
    pub verb: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
    pub priority: u8,
    pub ticket_kind: TicketKind,
}

/// A command executed immediately, before any ticket is raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfHealAction {
    pub actor_id: String,
    pub verb: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    /// Lower fires first.
    pub priority: u32,
    pub trigger: RuleTrigger,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub self_heal: Vec<SelfHealAction>,
    pub actions: Vec<RuleAction>,
    /// Commands executed once the originating event is resolved.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub on_resolve: Vec<SelfHealAction>,
    pub enabled: bool,
    /// Fallback for its event kind when nothing else matches.
    #[serde(default)]
    pub default: bool,
}

#[derive(Debug, Default)]
pub struct RulesStore {
    rules: Vec<Rule>,
    path: Option<PathBuf>,
}

impl RulesStore {
    pub fn open(path: PathBuf) -> Result<Self, BkrError> {
        let rules = if path.exists() {
            serde_json::from_slice(&std::fs::read(&path)?).map_err(|e| BkrError::Corrupt(e.to_string()))?
        } else {
            Vec::new()
        };
        Ok(Self { rules, path: Some(path) })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Replaces the whole store after checking it against the actor ids.
    pub fn replace(&mut self, rules: Vec<Rule>, actors: &BTreeSet<String>) -> Result<(), BkrError> {
        validate_rules(&rules, actors)?;
        if let Some(p) = &self.path {
            jsonl::write_json_atomic(p, &rules)?;
        }
        self.rules = rules;
        Ok(())
    }

    pub fn set_enabled(&mut self, rule_id: &str, enabled: bool) -> Result<(), BkrError> {
        let r = self
            .rules
            .iter_mut()
            .find(|r| r.rule_id == rule_id)
            .ok_or_else(|| BkrError::NotFound(rule_id.to_string()))?;
        r.enabled = enabled;
        if let Some(p) = &self.path {
            jsonl::write_json_atomic(p, &self.rules)?;
        }
        Ok(())
    }
}

pub fn validate_rules(rules: &[Rule], actors: &BTreeSet<String>) -> Result<(), BkrError> {
    let mut ids = BTreeSet::new();
    let mut defaults = BTreeSet::new();
    for r in rules {
        if !ids.insert(&r.rule_id) {
            return Err(BkrError::InvalidRecord(format!("duplicate rule id {}", r.rule_id)));
        }
        let actor_ids = r.actions.iter().map(|a| &a.actor_id).chain(r.self_heal.iter().chain(&r.on_resolve).map(|a| &a.actor_id));
        for a in actor_ids {
            if !actors.contains(a) {
                return Err(BkrError::InvalidRecord(format!("rule {}: unknown actor {a}", r.rule_id)));
            }
        }
        if r.default {
            let Some(kind) = r.trigger.kind else {
                return Err(BkrError::InvalidRecord(format!(
                    "rule {}: a default rule must name its event kind",
                    r.rule_id
                )));
            };
            if !defaults.insert(kind) {
                return Err(BkrError::InvalidRecord(format!("second default rule for {kind:?}")));
            }
        }
    }
    Ok(())
}
