//! `bsmart`: runs the autonomic building headlessly and drives a running
//! instance through its HTTP API.
//!
//! Flags may also come from `BSMART_*` environment variables; an explicit
//! flag wins over the variable, which wins over the built-in default.

mod client;
mod replay;
mod run;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit status for invalid input: unreadable or invalid config, scenario
/// or arguments.
pub const EXIT_INPUT: u8 = 2;
/// Exit status when the API cannot be reached.
pub const EXIT_UNREACHABLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "bsmart", version, about = "Autonomic smart-building runner and operator client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a building through a scenario and write its artifacts.
    Run(run::RunArgs),
    /// Print the reference building configuration as JSON.
    Config,
    /// Check a configuration file and list every problem found.
    Validate {
        #[arg(long, env = "BSMART_CONFIG")]
        config: PathBuf,
    },
    /// Replay a legacy BAS export through the detection pipeline.
    ReplayLegacy(replay::ReplayArgs),
    /// Current mode, open faults and counts.
    Status(ClientArgs),
    /// Change events, open and closed.
    Events(ClientArgs),
    /// Action tickets with their status.
    Tickets(ClientArgs),
    /// A named self-description report (unknown names list the supported ones).
    Report {
        name: String,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Acknowledge a ticket.
    Ack {
        ticket_id: String,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Resolve an acknowledged ticket: repaired, equipment-changed, waived,
    /// noted, approved or declined.
    Resolve {
        ticket_id: String,
        resolution: String,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Waive a device that failed commissioning.
    Waive {
        device_id: String,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Ask for a zone comfort band; it is clamped to the configured limits.
    Comfort {
        zone: String,
        lower: f64,
        upper: f64,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Start commissioning now instead of after the probe period.
    Commission(ClientArgs),
    /// Advance a running building by a number of ticks.
    Advance {
        ticks: u64,
        #[command(flatten)]
        api: ClientArgs,
    },
    /// Timeline entries after a sequence number.
    Timeline {
        #[arg(long, default_value_t = 0)]
        since: u64,
        #[command(flatten)]
        api: ClientArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ClientArgs {
    /// Base URL of a running `bsmart run --api-addr` instance.
    #[arg(long, env = "BSMART_API", default_value = "http://127.0.0.1:8080")]
    pub api: String,
    /// Actor performing the action.
    #[arg(long, env = "BSMART_ACTOR", default_value = "operator")]
    pub actor: String,
    /// Retry key; reuse it to repeat a request safely. Generated if absent.
    #[arg(long, env = "BSMART_REQUEST_ID")]
    pub request_id: Option<String>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("BSMART_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run::run(args),
        Command::Config => {
            let cfg = bsmart_core::runtime::BuildingConfig::reference();
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match run::load_config(Some(&config)) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(errs) => {
                run::report_errors(&errs);
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::ReplayLegacy(args) => replay::run(args),
        Command::Status(api) => client::get(&api, "/status"),
        Command::Events(api) => client::get(&api, "/events"),
        Command::Tickets(api) => client::get(&api, "/tickets"),
        Command::Report { name, api } => client::get(&api, &format!("/reports/{name}")),
        Command::Timeline { since, api } => client::get(&api, &format!("/timeline?since={since}")),
        Command::Ack { ticket_id, api } => client::post(&api, &format!("/tickets/{ticket_id}/ack"), None),
        Command::Resolve {
            ticket_id,
            resolution,
            api,
        } => match client::parse_resolution(&resolution) {
            Some(r) => client::post(
                &api,
                &format!("/tickets/{ticket_id}/resolve"),
                Some(serde_json::json!({ "resolution": r })),
            ),
            None => {
                eprintln!(
                    "unknown resolution {resolution:?}; use repaired, equipment-changed, waived, noted, approved or declined"
                );
                ExitCode::from(EXIT_INPUT)
            }
        },
        Command::Waive { device_id, api } => {
            client::post(&api, "/commission/waive", Some(serde_json::json!({ "device_id": device_id })))
        }
        Command::Comfort { zone, lower, upper, api } => client::post(
            &api,
            "/tenant/comfort",
            Some(serde_json::json!({ "zone": zone, "lower": lower, "upper": upper })),
        ),
        Command::Commission(api) => client::post(&api, "/commission", None),
        Command::Advance { ticks, api } => client::post(&api, "/advance", Some(serde_json::json!({ "ticks": ticks }))),
    }
}
