//! The scenario runner: boots a persisted building, steps it, optionally
//! serves the API while it runs, and writes the artifacts directory.
//!
//! Layout of `--out`:
//!
//! ```text
//! bkr/            knowledge repository (registry, real-time and historical zones)
//! broker/         durable topic logs and consumer offsets
//! config.json     the configuration the run used
//! scenario.json   the scenario the run used
//! summary.json    events, tickets, mode history and energy totals
//! timeline.jsonl  one timeline entry per line
//! journal.jsonl   one mode-journal entry per line
//! api.addr        bound API address, present while serving
//! ```

use crate::EXIT_INPUT;
use bsmart_core::runtime::{Building, BuildingConfig};
use bsmart_core::simulator::ScenarioScript;
use bsmart_server::{serve, Hub};
use clap::Args;
use serde::Serialize;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Building configuration (JSON). Defaults to the reference building.
    #[arg(long, env = "BSMART_CONFIG")]
    pub config: Option<PathBuf>,
    /// Scenario script (JSON). Defaults to no injections.
    #[arg(long, env = "BSMART_SCENARIO")]
    pub scenario: Option<PathBuf>,
    /// Ticks to run; an existing artifacts directory is resumed and run this
    /// many more ticks.
    #[arg(long, env = "BSMART_TICKS", default_value_t = 4320)]
    pub ticks: u64,
    /// Ticks per wall-clock second; 0 runs as fast as possible.
    #[arg(long, env = "BSMART_SPEED", default_value_t = 0.0)]
    pub speed: f64,
    /// Artifacts directory.
    #[arg(long, env = "BSMART_OUT", default_value = "bsmart-run")]
    pub out: PathBuf,
    /// Serve the HTTP API and event stream on this address while running.
    #[arg(long, env = "BSMART_API_ADDR")]
    pub api_addr: Option<SocketAddr>,
    /// Maintenance actors wait for a human resolve instead of acting on
    /// their scripts.
    #[arg(long, env = "BSMART_HOLD")]
    pub hold: bool,
    /// Delete an existing artifacts directory instead of resuming it.
    #[arg(long)]
    pub fresh: bool,
    /// Keep serving the API after the last tick until interrupted.
    #[arg(long)]
    pub linger: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{what} {}: {e}", path.display())])?;
    serde_json::from_str(&text).map_err(|e| vec![format!("{what} {}: {e}", path.display())])
}

pub fn load_config(path: Option<&Path>) -> Result<BuildingConfig, Vec<String>> {
    let cfg = match path {
        Some(p) => read_json(p, "config")?,
        None => BuildingConfig::reference(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_scenario(path: Option<&Path>, cfg: &BuildingConfig) -> Result<ScenarioScript, Vec<String>> {
    let sc: ScenarioScript = match path {
        Some(p) => read_json(p, "scenario")?,
        None => ScenarioScript::empty(),
    };
    sc.validate(&cfg.sim)
        .map_err(|errs| errs.iter().map(|e| format!("scenario: {e}")).collect::<Vec<_>>())?;
    Ok(sc)
}

pub fn report_errors(errs: &[String]) {
    eprintln!("{} error(s):", errs.len());
    for e in errs {
        eprintln!("  - {e}");
    }
}

#[derive(Serialize)]
struct Headline {
    out: PathBuf,
    ticks: u64,
    mode: String,
    events: usize,
    tickets: usize,
    metered_kwh: f64,
    hvac_kwh: f64,
    optimizations: u64,
}

fn write_artifacts(out: &Path, b: &Building) -> std::io::Result<()> {
    let summary = b.summary();
    std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
    let timeline = b.timeline().iter().map(serde_json::to_string).collect::<Result<Vec<_>, _>>()?;
    std::fs::write(out.join("timeline.jsonl"), lines(timeline))?;
    let journal = b.journal().iter().map(serde_json::to_string).collect::<Result<Vec<_>, _>>()?;
    std::fs::write(out.join("journal.jsonl"), lines(journal))?;
    Ok(())
}

fn headline(out: &Path, b: &Building) -> Headline {
    let s = b.summary();
    Headline {
        out: out.to_path_buf(),
        ticks: s.ticks,
        mode: b.mode().to_string(),
        events: s.events.len(),
        tickets: s.tickets.len(),
        metered_kwh: s.metered_kwh,
        hvac_kwh: s.hvac_kwh,
        optimizations: s.optimizations,
    }
}

pub fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(errs) => {
            report_errors(&errs);
            return ExitCode::from(EXIT_INPUT);
        }
    };
    cfg.runtime.hold_maintenance |= args.hold;
    let scenario = match load_scenario(args.scenario.as_deref(), &cfg) {
        Ok(s) => s,
        Err(errs) => {
            report_errors(&errs);
            return ExitCode::from(EXIT_INPUT);
        }
    };
    if !(args.speed >= 0.0 && args.speed.is_finite()) {
        report_errors(&["--speed must be a non-negative number".into()]);
        return ExitCode::from(EXIT_INPUT);
    }
    match execute(&args, cfg, scenario) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(args: &RunArgs, cfg: BuildingConfig, scenario: ScenarioScript) -> anyhow::Result<ExitCode> {
    let out = &args.out;
    if args.fresh && out.exists() {
        std::fs::remove_dir_all(out)?;
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
    std::fs::write(out.join("scenario.json"), serde_json::to_vec_pretty(&scenario)?)?;
    let building = Building::open(out, cfg, scenario)?;
    let hub = Hub::new(building);

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        runtime.spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                stop.store(true, Ordering::SeqCst);
            }
        });
    }
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let server = match args.api_addr {
        Some(addr) => {
            let (bound_tx, bound_rx) = tokio::sync::oneshot::channel();
            let task = runtime.spawn(serve(hub.clone(), addr, Some(bound_tx), async {
                let _ = shutdown_rx.await;
            }));
            let local = runtime.block_on(bound_rx)?;
            std::fs::write(out.join("api.addr"), local.to_string())?;
            eprintln!("API listening on http://{local}");
            Some(task)
        }
        None => None,
    };

    let started = Instant::now();
    let mut failure = None;
    for i in 0..args.ticks {
        if stop.load(Ordering::SeqCst) {
            eprintln!("interrupted after {i} ticks");
            break;
        }
        if let Err(e) = hub.with(|b| b.step()) {
            failure = Some(e);
            break;
        }
        if args.speed > 0.0 {
            let due = started + Duration::from_secs_f64((i + 1) as f64 / args.speed);
            std::thread::sleep(due.saturating_duration_since(Instant::now()));
        }
    }
    hub.read(|b| write_artifacts(out, b))?;

    if server.is_some() && args.linger && failure.is_none() {
        eprintln!("run finished; still serving, Ctrl-C to stop");
        while !stop.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(100));
        }
        hub.read(|b| write_artifacts(out, b))?;
    }
    if let Some(task) = server {
        let _ = shutdown_tx.send(());
        runtime.block_on(task)??;
        let _ = std::fs::remove_file(out.join("api.addr"));
    }
    runtime.shutdown_timeout(Duration::from_secs(1));

    let head = hub.read(|b| headline(out, b));
    println!("{}", serde_json::to_string_pretty(&head)?);
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(ExitCode::SUCCESS),
    }
}
