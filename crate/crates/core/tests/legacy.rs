use bsmart_core::interfacing::{replay, Emission, LegacyMapping, LegacyRow, ReplayConfig};
use bsmart_core::simulator::{reference_building, PointSpec};
use bsmart_core::types::EventKind;
use std::collections::BTreeMap;

const DUMP: &str = include_str!("fixtures/legacy_dump.jsonl");
const MAPPING: &str = include_str!("fixtures/legacy_mapping.json");

fn fixture() -> (LegacyMapping, Vec<LegacyRow>) {
    let mapping = serde_json::from_str(MAPPING).unwrap();
    let rows = DUMP.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (mapping, rows)
}

fn catalog() -> BTreeMap<String, PointSpec> {
    reference_building().points().into_iter().map(|p| (p.point_id.clone(), p)).collect()
}

#[test]
fn legacy_feed_detects_exactly_what_native_feed_detects() {
    let (mapping, rows) = fixture();
    let cfg = ReplayConfig::default();
    let legacy = replay(&mapping, &rows, &catalog(), Emission::Legacy, &cfg).unwrap();
    let native = replay(&mapping, &rows, &catalog(), Emission::Native, &cfg).unwrap();
    assert_eq!(legacy.vectors, native.vectors);
    assert_eq!(legacy.events, native.events);
    let kinds: Vec<(EventKind, &str)> = legacy
        .events
        .iter()
        .map(|e| (e.kind, e.evidence.point_id.as_str()))
        .collect();
    assert!(kinds.contains(&(EventKind::ConceptDrift, "chiller-1/power_kw")), "{kinds:?}");
    assert!(kinds.contains(&(EventKind::Fault, "chiller-1/chw_supply_temp")), "{kinds:?}");
}

#[test]
fn legacy_dump_is_ordered_deduplicated_and_quarantines_unmapped_rows() {
    let (mapping, rows) = fixture();
    let out = replay(&mapping, &rows, &catalog(), Emission::Legacy, &ReplayConfig::default()).unwrap();
    let unmapped = rows.iter().filter(|r| r.name == "AHU9.SAT").count() as u64;
    assert_eq!(out.quarantined, unmapped);
    assert_eq!(out.duplicates, 1);
    assert_eq!(out.published + out.duplicates + out.quarantined, rows.len() as u64);
}
