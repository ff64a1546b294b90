//! Discovery and classification of point feeds.
//!
//! Discovery scans every broker topic, quarantine included, over a probe
//! window and summarises each point it finds. Classification maps those
//! summaries to device classes with a table of feature rules; anything the
//! table cannot place confidently is labelled `Unknown` for a human.

use crate::bkr::{Baseline, RegistrySnapshot};
use crate::broker::Broker;
use crate::stream::{TransformTable, QUARANTINE_TOPIC};
use crate::types::{Source, Tick};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const UNKNOWN_CLASS: &str = "Unknown";

/// Confidence at or above which a classification is registered without a
/// human label.
pub const AUTO_REGISTER_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeWindow {
    pub start_tick: Tick,
    pub end_tick: Tick,
    pub start_ms: i64,
    pub tick_ms: i64,
}

impl ProbeWindow {
    pub fn ticks(&self) -> u64 {
        self.end_tick.saturating_sub(self.start_tick)
    }

    fn tick_of(&self, ts: i64) -> Option<Tick> {
        let off = ts - self.start_ms;
        if off < 0 {
            return None;
        }
        let t = self.start_tick + (off / self.tick_ms) as u64;
        (t < self.end_tick).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub point_id: String,
    pub device_id: String,
    /// Canonical unit after transforms.
    pub unit: String,
    pub source: Source,
    pub messages: u64,
    /// Per-tick samples from the first observation to the window end.
    pub samples: u64,
    /// Messages per tick over the sampled span.
    pub cadence: f64,
    pub stats: ValueStats,
    pub known: bool,
    #[serde(skip)]
    pub series: Vec<f64>,
}

impl CandidatePoint {
    /// Name metadata as lowercase tokens, split on punctuation and on
    /// letter/digit boundaries.
    pub fn name_tokens(&self) -> Vec<String> {
        tokenize(&format!("{} {}", self.point_id, self.device_id))
    }

    pub fn baseline(&self) -> Baseline {
        Baseline::from_samples(&self.series)
    }
}

pub fn tokenize(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut prev_digit: Option<bool> = None;
    for ch in name.chars() {
        if !ch.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            prev_digit = None;
            continue;
        }
        let digit = ch.is_ascii_digit();
        if prev_digit.is_some_and(|p| p != digit) && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.extend(ch.to_lowercase());
        prev_digit = Some(digit);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Every point seen on any data topic during `window`, once each, sorted by id.
pub fn discover(
    broker: &Broker,
    window: ProbeWindow,
    transforms: &TransformTable,
    registry: &RegistrySnapshot,
) -> Vec<CandidatePoint> {
    struct Acc {
        device_id: String,
        unit: String,
        source: Source,
        by_tick: BTreeMap<Tick, (i64, u64, f64)>,
        messages: u64,
    }
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for topic in broker.topics().into_iter().filter(|t| t != QUARANTINE_TOPIC) {
        let Ok(cursor) = broker.subscribe(&topic, 0) else {
            continue;
        };
        for e in cursor {
            let m = e.msg;
            let Some(t) = window.tick_of(m.timestamp) else {
                continue;
            };
            if !seen.insert(m.dedup_key()) {
                continue;
            }
            let (v, unit) = transforms.canonical(&m);
            let a = acc.entry(m.point_id.clone()).or_insert_with(|| Acc {
                device_id: m.device_id.clone(),
                unit,
                source: m.source,
                by_tick: BTreeMap::new(),
                messages: 0,
            });
            a.messages += 1;
            let slot = a.by_tick.entry(t).or_insert((m.timestamp, m.seq_no, v));
            if (m.timestamp, m.seq_no) >= (slot.0, slot.1) {
                *slot = (m.timestamp, m.seq_no, v);
            }
        }
    }
    acc.into_iter()
        .map(|(point_id, a)| {
            let first = *a.by_tick.keys().next().expect("at least one message");
            let mut series = Vec::with_capacity((window.end_tick - first) as usize);
            let mut last = f64::NAN;
            for t in first..window.end_tick {
                if let Some((_, _, v)) = a.by_tick.get(&t) {
                    last = *v;
                }
                series.push(last);
            }
            let b = Baseline::from_samples(&series);
            let samples = series.len() as u64;
            CandidatePoint {
                known: registry.device_for_point(&point_id).is_some(),
                device_id: a.device_id,
                unit: a.unit,
                source: a.source,
                messages: a.messages,
                samples,
                cadence: a.messages as f64 / samples.max(1) as f64,
                stats: ValueStats {
                    min: series.iter().copied().fold(f64::INFINITY, f64::min),
                    max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean: b.mean,
                    std: b.std,
                },
                series,
                point_id,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: String,
    pub confidence: f64,
}

impl Classification {
    pub fn unknown() -> Self {
        Self {
            class: UNKNOWN_CLASS.into(),
            confidence: 0.0,
        }
    }

    pub fn is_known(&self) -> bool {
        self.class != UNKNOWN_CLASS
    }
}

/// Seam for swapping the rule table for a learned model.
pub trait Classifier: Send + Sync {
    fn classify(&self, candidate: &CandidatePoint) -> Classification;
}

/// One row of the classification table. The unit gates the rule; value
/// range, name tokens and cadence each add to the confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRule {
    pub class: String,
    pub unit: String,
    /// Any one of these tokens in the name counts as a match.
    pub tokens: Vec<String>,
    pub range: (f64, f64),
    /// Messages per tick.
    #[serde(default = "any_cadence")]
    pub cadence: (f64, f64),
}

fn any_cadence() -> (f64, f64) {
    (0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleClassifier {
    pub rules: Vec<ClassRule>,
    pub min_samples: u64,
}

impl RuleClassifier {
    fn score(rule: &ClassRule, c: &CandidatePoint, tokens: &[String]) -> Option<f64> {
        if rule.unit != c.unit {
            return None;
        }
        let mut hits = 1;
        if c.stats.min >= rule.range.0 && c.stats.max <= rule.range.1 {
            hits += 1;
        }
        if rule.tokens.iter().any(|t| tokens.contains(t)) {
            hits += 1;
        }
        if c.cadence >= rule.cadence.0 && c.cadence <= rule.cadence.1 {
            hits += 1;
        }
        Some(hits as f64 / 4.0)
    }
}

impl Classifier for RuleClassifier {
    fn classify(&self, c: &CandidatePoint) -> Classification {
        if c.samples < self.min_samples {
            return Classification::unknown();
        }
        let tokens = c.name_tokens();
        let mut best: Option<(f64, &str)> = None;
        let mut tied = false;
        for r in &self.rules {
            let Some(s) = Self::score(r, c, &tokens) else {
                continue;
            };
            match best {
                Some((b, class)) if s == b && class != r.class => tied = true,
                Some((b, _)) if s <= b => {}
                _ => {
                    best = Some((s, &r.class));
                    tied = false;
                }
            }
        }
        match best {
            Some((s, class)) if !tied && s >= AUTO_REGISTER_CONFIDENCE => Classification {
                class: class.to_string(),
                confidence: s,
            },
            _ => Classification::unknown(),
        }
    }
}

impl Default for RuleClassifier {
    fn default() -> Self {
        let r = |class: &str, unit: &str, tokens: &[&str], range: (f64, f64)| ClassRule {
            class: class.into(),
            unit: unit.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            range,
            cadence: any_cadence(),
        };
        let mut status = r("StatusSensor", "state", &["status", "state", "alarm"], (0.0, 1.0));
        status.cadence = (0.0, 0.05);
        Self {
            rules: vec![
                r("ZoneTempSensor", "°C", &["zone", "room"], (15.0, 30.0)),
                r("ChilledWaterTempSensor", "°C", &["chw", "chilled"], (2.0, 20.0)),
                r("SupplyAirTempSensor", "°C", &["air", "ahu", "sat"], (6.0, 20.0)),
                r("HotWaterTempSensor", "°C", &["hw", "hot", "boiler"], (30.0, 95.0)),
                r("OutdoorTempSensor", "°C", &["outdoor", "weather", "oat"], (-30.0, 45.0)),
                r("PowerMeter", "kW", &["kw", "power", "meter"], (0.0, 500.0)),
                r("ThermalLoadSensor", "kWth", &["load", "cooling", "kwth"], (0.0, 500.0)),
                r("AirflowSensor", "m3/s", &["airflow", "flow"], (0.0, 50.0)),
                r("ShadePositionSensor", "%", &["position", "shade", "blind"], (0.0, 100.0)),
                r("VoltageSensor", "V", &["voltage", "volt"], (0.0, 500.0)),
                r("FrequencySensor", "Hz", &["frequency", "freq", "hz"], (0.0, 70.0)),
                status,
            ],
            min_samples: 10,
        }
    }
}
