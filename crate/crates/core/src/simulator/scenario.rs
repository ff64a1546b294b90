use super::config::SimConfig;
use crate::types::Tick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InjectionKind {
    FaultInjection,
    DriftInjection,
    Repair,
}

/// Knobs an injection may turn. Unused fields stay `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InjectionParams {
    /// Additive sensor bias in the point's unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    /// Sensor frozen at this reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stuck: Option<f64>,
    /// Mains outage on a power-supply system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outage: Option<bool>,
    /// Multiplier applied permanently to the chiller COP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cop_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub tick: Tick,
    pub kind: InjectionKind,
    /// A system id or a point id.
    pub target: String,
    #[serde(default)]
    pub params: InjectionParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    #[serde(default)]
    pub name: String,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("event {index}: tick {tick} precedes the previous event")]
    Unordered { index: usize, tick: Tick },
    #[error("event {index}: unknown target {target}")]
    UnknownTarget { index: usize, target: String },
    #[error("event {index}: {reason}")]
    BadParams { index: usize, reason: String },
}

impl ScenarioScript {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self, config: &SimConfig) -> Result<(), Vec<ScenarioError>> {
        let mut errs = Vec::new();
        let mut last = 0;
        for (index, ev) in self.events.iter().enumerate() {
            if ev.tick < last {
                errs.push(ScenarioError::Unordered { index, tick: ev.tick });
            }
            last = last.max(ev.tick);
            if config.system_of(&ev.target).is_none() {
                errs.push(ScenarioError::UnknownTarget {
                    index,
                    target: ev.target.clone(),
                });
            }
            let p = &ev.params;
            let reason = match ev.kind {
                InjectionKind::FaultInjection
                    if p.bias.is_none() && p.stuck.is_none() && p.outage != Some(true) =>
                {
                    Some("fault injection needs bias, stuck or outage")
                }
                InjectionKind::DriftInjection if !matches!(p.cop_factor, Some(f) if f > 0.0) => {
                    Some("drift injection needs a positive cop_factor")
                }
                _ => None,
            };
            if let Some(reason) = reason {
                errs.push(ScenarioError::BadParams {
                    index,
                    reason: reason.into(),
                });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}
