//! `replay-legacy`: feeds a legacy BAS export through the broker, the
//! stream engine and the change detector.

use crate::EXIT_INPUT;
use bsmart_core::interfacing::{replay, Emission, LegacyMapping, LegacyRow, ReplayConfig};
use clap::Args;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Legacy point mapping (JSON).
    #[arg(long)]
    pub mapping: PathBuf,
    /// Legacy export, one JSON row per line.
    #[arg(long)]
    pub dump: PathBuf,
    /// Building configuration the points belong to. Defaults to the
    /// reference building.
    #[arg(long, env = "BSMART_CONFIG")]
    pub config: Option<PathBuf>,
    /// Publish the converted readings as native messages instead of going
    /// through the legacy adapter.
    #[arg(long)]
    pub native: bool,
    /// Ticks at the start of the export used as the baseline.
    #[arg(long, default_value_t = 100)]
    pub baseline_ticks: u64,
    /// Include every assembled state vector in the output.
    #[arg(long)]
    pub vectors: bool,
}

#[derive(Serialize)]
struct Output {
    emission: Emission,
    ticks: u64,
    published: u64,
    duplicates: u64,
    quarantined: u64,
    events: Vec<bsmart_core::cdo::ChangeEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vectors: Option<Vec<bsmart_core::stream::StateVector>>,
}

fn load(args: &ReplayArgs) -> Result<(LegacyMapping, Vec<LegacyRow>, bsmart_core::runtime::BuildingConfig), Vec<String>> {
    let cfg = crate::run::load_config(args.config.as_deref())?;
    let mapping_text = std::fs::read_to_string(&args.mapping).map_err(|e| vec![format!("mapping: {e}")])?;
    let mapping = serde_json::from_str(&mapping_text).map_err(|e| vec![format!("mapping: {e}")])?;
    let dump = std::fs::read_to_string(&args.dump).map_err(|e| vec![format!("dump: {e}")])?;
    let mut rows = Vec::new();
    let mut errs = Vec::new();
    for (i, line) in dump.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => rows.push(r),
            Err(e) => errs.push(format!("dump line {}: {e}", i + 1)),
        }
    }
    if errs.is_empty() {
        Ok((mapping, rows, cfg))
    } else {
        Err(errs)
    }
}

pub fn run(args: ReplayArgs) -> ExitCode {
    let (mapping, rows, cfg) = match load(&args) {
        Ok(x) => x,
        Err(errs) => {
            crate::run::report_errors(&errs);
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let catalog = cfg.sim.points().into_iter().map(|p| (p.point_id.clone(), p)).collect();
    let rcfg = ReplayConfig {
        tick_ms: cfg.sim.tick_seconds as i64 * 1000,
        baseline_ticks: args.baseline_ticks,
        detector: cfg.runtime.detector.clone(),
    };
    let emission = if args.native { Emission::Native } else { Emission::Legacy };
    match replay(&mapping, &rows, &catalog, emission, &rcfg) {
        Ok(o) => {
            let out = Output {
                emission: o.emission,
                ticks: o.ticks,
                published: o.published,
                duplicates: o.duplicates,
                quarantined: o.quarantined,
                events: o.events,
                vectors: args.vectors.then_some(o.vectors),
            };
            println!("{}", serde_json::to_string_pretty(&out).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
