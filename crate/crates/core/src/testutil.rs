use crate::bkr::{Baseline, DeviceRecord};
use crate::types::{OperatingRange, Quality, SensorMessage, Source};

pub fn record(point: &str, mean: f64, std: f64, range: (f64, f64)) -> DeviceRecord {
    let (system, quantity) = point.split_once('/').unwrap_or((point, "value"));
    DeviceRecord {
        device_id: format!("{system}.{quantity}"),
        point_ids: vec![point.to_string()],
        class: "Test".into(),
        confidence: 1.0,
        system: system.to_string(),
        system_kind: None,
        operating_range: OperatingRange::new(range.0, range.1),
        unit: "u".into(),
        baseline: Baseline {
            mean,
            std,
            sample_count: 1440,
            window_ticks: 1440,
        },
        source: Source::Native,
        commissioned_at: 0,
        waived: false,
    }
}

pub fn message(point: &str, seq: u64, ts: i64, value: f64) -> SensorMessage {
    let (system, quantity) = point.split_once('/').unwrap_or((point, "value"));
    SensorMessage {
        device_id: format!("{system}.{quantity}"),
        point_id: point.to_string(),
        seq_no: seq,
        timestamp: ts,
        value,
        unit: "u".into(),
        quality: Quality::Good,
        source: Source::Native,
    }
}
