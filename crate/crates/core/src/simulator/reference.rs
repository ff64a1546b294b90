use super::config::*;
use std::collections::BTreeMap;

/// The 50-point reference office building used by the demo scenarios and
/// the acceptance suite: ten zones on a shared chiller and two-speed air
/// handler, plus boiler, shading, mains, meter, generator, weather station,
/// elevator and security panel.
pub fn reference_building() -> SimConfig {
    let zones = (1..=10)
        .map(|i| {
            let south = i <= 5;
            ZoneSpec {
                id: format!("zone-{i:02}"),
                capacitance_j_per_k: 5.0e6,
                conductance_w_per_k: 150.0,
                initial_temp_c: 23.0,
                setpoint_c: 23.0,
                gain_schedule: vec![GainWindow {
                    start_hour: 0.0,
                    end_hour: 24.0,
                    watts: 1000.0,
                }],
                lighting_kw: 1.0,
                plug_kw: 3.0,
                solar_peak_w: if south { 200.0 } else { 80.0 },
                facade: Some(if south { "south" } else { "north" }.to_string()),
                coil_ua_w_per_k: 1500.0,
                comfort_band: ComfortBand {
                    lower: 21.5,
                    upper: 24.5,
                },
                comfort_limits: ComfortBand {
                    lower: 20.0,
                    upper: 26.0,
                },
            }
        })
        .collect();
    let systems = vec![
        SystemSpec::Chiller(ChillerSpec {
            id: "chiller-1".into(),
            capacity_kw: 150.0,
            cop_intercept: -1.0,
            cop_slope: 0.5,
            chw_flow_kw_per_k: 12.0,
            pump_kw: 1.0,
            setpoint_c: 7.0,
        }),
        SystemSpec::AirHandler(AirHandlerSpec {
            id: "ahu-1".into(),
            coil_approach_c: 2.0,
            low_speed_flow_m3s: 3.835,
            low_speed_kw: 2.0,
            high_speed_kw: 11.0,
        }),
        SystemSpec::Boiler(BoilerSpec {
            id: "boiler-1".into(),
            capacity_kw: 100.0,
            efficiency: 0.9,
            standby_kw: 0.5,
            supply_temp_c: 70.0,
            heating_deadband_c: 1.5,
        }),
        SystemSpec::ShadingSystem(ShadingSpec {
            id: "shade-1".into(),
            facades: vec!["south".into(), "north".into()],
            initial_position_pct: 50.0,
        }),
        SystemSpec::PowerSupply(PowerSupplySpec {
            id: "mains-1".into(),
            nominal_voltage: 230.0,
            nominal_frequency: 50.0,
        }),
        SystemSpec::Meter(PlainSpec { id: "meter-1".into() }),
        SystemSpec::BackupGenerator(GeneratorSpec {
            id: "gen-1".into(),
            capacity_kw: 150.0,
        }),
        SystemSpec::Weather(PlainSpec {
            id: "weather-1".into(),
        }),
        SystemSpec::Elevator(FixedLoadSpec {
            id: "elevator-1".into(),
            power_kw: 3.0,
        }),
        SystemSpec::Security(FixedLoadSpec {
            id: "security-1".into(),
            power_kw: 0.5,
        }),
    ];
    SimConfig {
        tick_seconds: 60,
        start_ms: 0,
        zones,
        systems,
        outdoor: OutdoorModel {
            mean_c: 28.0,
            amplitude_c: 1.0,
            period_hours: 24.0,
            peak_hour: 15.0,
        },
        default_cov_threshold: DEFAULT_COV_THRESHOLD,
        cov_thresholds: BTreeMap::new(),
        noise: BTreeMap::new(),
        ranges: BTreeMap::new(),
        seed: 7,
    }
}
