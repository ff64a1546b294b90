use crate::bkr::{Bkr, BkrError, HourlyAggregate, Watermark};
use crate::types::Tick;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const ETL_REPORT_LOG: &str = "etl_reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtlReport {
    pub run_at: Tick,
    pub from_tick: Tick,
    pub to_tick: Tick,
    pub hours: u64,
    pub vectors: u64,
    /// Point values read from the real-time zone.
    pub values_read: u64,
    /// Sum of `count` over the aggregates covering the exported range.
    pub values_aggregated: u64,
    pub rows_written: u64,
    pub evicted: u64,
}

impl EtlReport {
    pub fn conserved(&self) -> bool {
        self.values_read == self.values_aggregated
    }
}

/// Exports every complete hour past the watermark into hourly aggregates,
/// advances the watermark, then lets the real-time zone evict. Rerunning
/// after a crash re-exports the same hours without duplicating rows.
pub fn etl_cycle(bkr: &mut Bkr, ticks_per_hour: u64, now: Tick) -> Result<Option<EtlReport>, BkrError> {
    let tph = ticks_per_hour.max(1);
    let Some(latest) = bkr.rt.latest().map(|v| v.tick) else {
        return Ok(None);
    };
    let mut from = bkr.hist.watermark().exported_to;
    if let Some(first) = bkr.rt.first_tick() {
        if first > from {
            from = first.div_ceil(tph) * tph;
        }
    }
    let to = (latest + 1) / tph * tph;
    if to <= from {
        return Ok(None);
    }
    let mut report = EtlReport {
        run_at: now,
        from_tick: from,
        to_tick: to,
        hours: (to - from) / tph,
        vectors: 0,
        values_read: 0,
        values_aggregated: 0,
        rows_written: 0,
        evicted: 0,
    };
    let read = bkr.rt.read(from, to);
    let mut by_hour: BTreeMap<u64, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for sv in &read.vectors {
        report.vectors += 1;
        let hour = sv.tick / tph;
        let slot = by_hour.entry(hour).or_default();
        for (p, v) in &sv.values {
            report.values_read += 1;
            slot.entry(p.clone()).or_default().push(v.value);
        }
    }
    for (hour, points) in by_hour {
        let rows: Vec<HourlyAggregate> = points
            .iter()
            .map(|(p, xs)| HourlyAggregate::from_samples(hour, p, xs))
            .collect();
        report.rows_written += bkr.hist.write_hist(rows)? as u64;
    }
    let (h0, h1) = (from / tph, to / tph);
    report.values_aggregated = bkr
        .hist
        .aggregates()
        .iter()
        .filter(|a| a.hour >= h0 && a.hour < h1)
        .map(|a| a.count)
        .sum();
    if bkr.hist.watermark().exported_to < to {
        bkr.hist.set_watermark(Watermark { exported_to: to })?;
    }
    report.evicted = bkr.rt.evict(to)? as u64;
    bkr.hist.append(ETL_REPORT_LOG, &report)?;
    Ok(Some(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bkr::{BkrConfig, HistStat};
    use crate::stream::{PointValue, Provenance, StateVector};
    use crate::types::Quality;

    fn sv(tick: Tick) -> StateVector {
        let mut values = BTreeMap::new();
        for (p, v) in [("a/v", tick as f64), ("b/v", 2.0)] {
            values.insert(
                p.to_string(),
                PointValue {
                    value: v,
                    provenance: Provenance::Observed,
                    age_ticks: 0,
                    quality: Quality::Good,
                    late: false,
                },
            );
        }
        StateVector {
            tick,
            tick_ts: tick as i64 * 60_000,
            values,
        }
    }

    fn filled(n: Tick) -> Bkr {
        let mut b = Bkr::in_memory(BkrConfig::default());
        for t in 0..n {
            b.write_rt(&sv(t)).unwrap();
        }
        b
    }

    #[test]
    fn exports_whole_hours_and_conserves_counts() {
        let mut b = filled(150);
        let r = etl_cycle(&mut b, 60, 150).unwrap().unwrap();
        assert_eq!((r.from_tick, r.to_tick, r.hours), (0, 120, 2));
        assert_eq!(r.values_read, 240);
        assert!(r.conserved());
        assert_eq!(b.hist.watermark().exported_to, 120);
        let m = b.hist.query_hist("a/v", 0, 2, HistStat::Mean);
        assert_eq!(m.values, vec![(0, 29.5), (1, 89.5)]);
        assert!(etl_cycle(&mut b, 60, 151).unwrap().is_none());
        assert_eq!(b.hist.log_len(ETL_REPORT_LOG), 1);
    }

    #[test]
    fn crash_mid_export_recovers_without_duplicates() {
        let mut b = filled(240);
        b.hist.fail_after_batches(Some(2));
        assert!(etl_cycle(&mut b, 60, 240).is_err());
        assert_eq!(b.hist.watermark().exported_to, 0);
        assert_eq!(b.hist.aggregates().len(), 4);
        b.hist.fail_after_batches(None);
        let r = etl_cycle(&mut b, 60, 241).unwrap().unwrap();
        assert_eq!(r.rows_written, 4);
        assert_eq!(b.hist.aggregates().len(), 8);
        assert!(r.conserved());
    }

    #[test]
    fn eviction_follows_the_watermark() {
        let mut b = filled(1600);
        let r = etl_cycle(&mut b, 60, 1600).unwrap().unwrap();
        assert_eq!(r.to_tick, 1560);
        assert_eq!(r.evicted, 160);
        assert_eq!(b.rt.len(), 1440);
    }
}
