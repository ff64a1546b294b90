use super::registry::{Baseline, BaselineProvenance};
use super::BkrError;
use crate::jsonl::{self, JsonlWriter};
use crate::types::Tick;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::PathBuf;

const AGGREGATES: &str = "aggregates";
const BASELINES: &str = "baselines";

/// Per-point statistics over one simulated hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyAggregate {
    pub hour: u64,
    pub point_id: String,
    pub count: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
}

impl HourlyAggregate {
    pub fn from_samples(hour: u64, point_id: &str, samples: &[f64]) -> Self {
        let b = Baseline::from_samples(samples);
        Self {
            hour,
            point_id: point_id.to_string(),
            count: samples.len() as u64,
            mean: b.mean,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: b.std,
        }
    }
}

/// A superseded baseline, kept with the provenance of its replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineArchiveEntry {
    pub point_id: String,
    pub device_id: String,
    pub previous: Baseline,
    pub replacement: Baseline,
    pub provenance: BaselineProvenance,
    pub tick: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistStat {
    Mean,
    Min,
    Max,
    Std,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistSeries {
    pub point_id: String,
    pub stat: HistStat,
    pub values: Vec<(u64, f64)>,
    /// Requested hours with no aggregate row.
    pub gaps: Vec<u64>,
    pub requested: (u64, u64),
}

/// Pooled statistics across several hourly rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledStats {
    pub count: u64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    /// First tick not yet exported.
    pub exported_to: Tick,
}

/// Append-only archive. Nothing here is ever rewritten in place; every
/// append is flushed to disk before it becomes visible.
#[derive(Debug, Default)]
pub struct HistZone {
    dir: Option<PathBuf>,
    aggregates: Vec<HourlyAggregate>,
    agg_keys: HashSet<(u64, String)>,
    archive: Vec<BaselineArchiveEntry>,
    logs: BTreeMap<String, Vec<serde_json::Value>>,
    writers: BTreeMap<String, JsonlWriter>,
    watermark: Watermark,
    /// Test hook: fail the append after this many more aggregate batches.
    fail_after_batches: Option<usize>,
}

impl HistZone {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn exists(dir: &std::path::Path) -> bool {
        dir.is_dir()
    }

    pub fn open(dir: PathBuf) -> Result<Self, BkrError> {
        fs::create_dir_all(&dir)?;
        let mut z = Self {
            dir: Some(dir.clone()),
            ..Self::default()
        };
        for a in jsonl::read_all::<HourlyAggregate>(dir.join(format!("{AGGREGATES}.jsonl")))? {
            if z.agg_keys.insert((a.hour, a.point_id.clone())) {
                z.aggregates.push(a);
            }
        }
        z.archive = jsonl::read_all(dir.join(format!("{BASELINES}.jsonl")))?;
        for e in fs::read_dir(&dir)?.filter_map(|e| e.ok()) {
            let path = e.path();
            let Some(name) = path.file_stem().map(|s| s.to_string_lossy().to_string()) else {
                continue;
            };
            if path.extension().is_some_and(|x| x == "jsonl") && name != AGGREGATES && name != BASELINES {
                z.logs.insert(name, jsonl::read_all(&path)?);
            }
        }
        let wm = dir.join("watermark.json");
        if wm.exists() {
            z.watermark = serde_json::from_slice(&fs::read(wm)?).map_err(|e| BkrError::Corrupt(e.to_string()))?;
        }
        Ok(z)
    }

    fn writer(&mut self, name: &str) -> Result<Option<&mut JsonlWriter>, BkrError> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        if !self.writers.contains_key(name) {
            let w = JsonlWriter::open(dir.join(format!("{name}.jsonl")), true)?;
            self.writers.insert(name.to_string(), w);
        }
        Ok(self.writers.get_mut(name))
    }

    pub fn fail_after_batches(&mut self, n: Option<usize>) {
        self.fail_after_batches = n;
    }

    /// Appends the rows whose `(hour, point)` key is new; returns how many.
    pub fn write_hist(&mut self, rows: Vec<HourlyAggregate>) -> Result<usize, BkrError> {
        if let Some(n) = self.fail_after_batches.as_mut() {
            if *n == 0 {
                return Err(BkrError::Unavailable("historical zone (injected crash)".into()));
            }
            *n -= 1;
        }
        let fresh: Vec<_> = rows
            .into_iter()
            .filter(|r| !self.agg_keys.contains(&(r.hour, r.point_id.clone())))
            .collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        if let Some(w) = self.writer(AGGREGATES)? {
            w.append_all(&fresh)?;
        }
        for r in &fresh {
            self.agg_keys.insert((r.hour, r.point_id.clone()));
        }
        let n = fresh.len();
        self.aggregates.extend(fresh);
        Ok(n)
    }

    pub fn has_hour(&self, hour: u64, point_id: &str) -> bool {
        self.agg_keys.contains(&(hour, point_id.to_string()))
    }

    pub fn aggregates(&self) -> &[HourlyAggregate] {
        &self.aggregates
    }

    /// One statistic per hour in `[from_hour, to_hour)`, with missing hours
    /// listed rather than silently skipped.
    pub fn query_hist(&self, point_id: &str, from_hour: u64, to_hour: u64, stat: HistStat) -> HistSeries {
        let mut by_hour: BTreeMap<u64, &HourlyAggregate> = BTreeMap::new();
        for a in self.aggregates.iter().filter(|a| a.point_id == point_id) {
            if (from_hour..to_hour).contains(&a.hour) {
                by_hour.insert(a.hour, a);
            }
        }
        let gaps = (from_hour..to_hour).filter(|h| !by_hour.contains_key(h)).collect();
        let values = by_hour
            .into_iter()
            .map(|(h, a)| {
                let v = match stat {
                    HistStat::Mean => a.mean,
                    HistStat::Min => a.min,
                    HistStat::Max => a.max,
                    HistStat::Std => a.std,
                    HistStat::Count => a.count as f64,
                };
                (h, v)
            })
            .collect();
        HistSeries {
            point_id: point_id.to_string(),
            stat,
            values,
            gaps,
            requested: (from_hour, to_hour),
        }
    }

    /// Combines the hourly rows of `[from_hour, to_hour)` into whole-range
    /// statistics.
    pub fn pooled(&self, point_id: &str, from_hour: u64, to_hour: u64) -> Option<PooledStats> {
        let rows: Vec<_> = self
            .aggregates
            .iter()
            .filter(|a| a.point_id == point_id && (from_hour..to_hour).contains(&a.hour))
            .collect();
        let count: u64 = rows.iter().map(|a| a.count).sum();
        if count == 0 {
            return None;
        }
        let n = count as f64;
        let mean = rows.iter().map(|a| a.mean * a.count as f64).sum::<f64>() / n;
        let m2: f64 = rows
            .iter()
            .map(|a| a.count as f64 * (a.std.powi(2) + (a.mean - mean).powi(2)))
            .sum();
        Some(PooledStats {
            count,
            mean,
            std: (m2 / n).sqrt(),
            min: rows.iter().map(|a| a.min).fold(f64::INFINITY, f64::min),
            max: rows.iter().map(|a| a.max).fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn archive_baseline(&mut self, entry: BaselineArchiveEntry) -> Result<(), BkrError> {
        if let Some(w) = self.writer(BASELINES)? {
            w.append(&entry)?;
        }
        self.archive.push(entry);
        Ok(())
    }

    pub fn baseline_archive(&self) -> &[BaselineArchiveEntry] {
        &self.archive
    }

    /// Appends one record to a named log (journal, schedules, reports, ...).
    pub fn append<T: Serialize>(&mut self, log: &str, record: &T) -> Result<(), BkrError> {
        let v = serde_json::to_value(record).map_err(|e| BkrError::Corrupt(e.to_string()))?;
        if let Some(w) = self.writer(log)? {
            w.append(&v)?;
        }
        self.logs.entry(log.to_string()).or_default().push(v);
        Ok(())
    }

    pub fn records<T: DeserializeOwned>(&self, log: &str) -> Result<Vec<T>, BkrError> {
        self.logs
            .get(log)
            .map(|v| {
                v.iter()
                    .map(|x| serde_json::from_value(x.clone()).map_err(|e| BkrError::Corrupt(e.to_string())))
                    .collect()
            })
            .unwrap_or_else(|| Ok(Vec::new()))
    }

    pub fn log_len(&self, log: &str) -> usize {
        self.logs.get(log).map_or(0, Vec::len)
    }

    pub fn watermark(&self) -> Watermark {
        self.watermark
    }

    pub fn set_watermark(&mut self, wm: Watermark) -> Result<(), BkrError> {
        if wm.exported_to < self.watermark.exported_to {
            return Err(BkrError::Corrupt(format!(
                "watermark may not move back from {} to {}",
                self.watermark.exported_to, wm.exported_to
            )));
        }
        if let Some(dir) = &self.dir {
            jsonl::write_json_atomic(dir.join("watermark.json"), &wm)?;
        }
        self.watermark = wm;
        Ok(())
    }
}
